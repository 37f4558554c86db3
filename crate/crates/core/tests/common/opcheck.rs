//! Per-op gradient checks: tape gradients (f32) against central differences
//! of an independent fp64 re-implementation of each op.

use ttd::rng::SeedStream;
use ttd::tensor::{Tape, Tensor, Var};
use ttd::trainer::relative_error;
use ttd::Result;

type Build = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>>;
type Shadow = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct OpCase {
    pub name: &'static str,
    /// Shapes and values of the differentiable inputs.
    pub inputs: Vec<(Vec<usize>, Vec<f32>)>,
    pub build: Build,
    pub shadow: Shadow,
}

pub struct OpResult {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

const H: f64 = 1e-6;

/// Checks `∂/∂x Σ wᵢ·op(x)ᵢ` for every input element, with fixed random `w`.
pub fn check(case: &OpCase, rng: &mut SeedStream) -> Result<OpResult> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap().with_grad(true)))
        .collect();
    let y = (case.build)(&mut tape, &vars)?;
    let n_out = tape.value(y).numel();
    let w: Vec<f32> = (0..n_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let wv = tape.constant(tape.shape(y).to_vec(), w.clone())?;
    let yw = tape.mul(y, wv)?;
    let loss = tape.sum_all(yw)?;
    tape.backward(loss)?;

    let x64: Vec<Vec<f64>> = case
        .inputs
        .iter()
        .map(|(_, d)| d.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let objective = |xs: &[Vec<f64>]| -> f64 {
        let out = (case.shadow)(xs);
        assert_eq!(out.len(), n_out, "{}: shadow output size", case.name);
        out.iter().zip(&w).map(|(o, &wi)| o * f64::from(wi)).sum()
    };
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; x64[k].len()]);
        for i in 0..x64[k].len() {
            let mut xs = x64.clone();
            xs[k][i] += H;
            let up = objective(&xs);
            xs[k][i] -= 2.0 * H;
            let down = objective(&xs);
            let numeric = (up - down) / (2.0 * H);
            max_rel = max_rel.max(relative_error(f64::from(analytic[i]), numeric));
            checked += 1;
        }
    }
    Ok(OpResult {
        name: case.name,
        checked,
        max_rel_error: max_rel,
    })
}

fn uniform(rng: &mut SeedStream, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// Values in `[-2, 2]` kept at least `gap` away from zero.
fn away_from_zero(rng: &mut SeedStream, n: usize, gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v = rng.uniform(gap, 2.0);
            if rng.below(2) == 0 {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn matmul64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

fn softmax64(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn permute64(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = (0..shape.len()).map(|i| shape[i + 1..].iter().product()).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..x.len() {
        let src: usize = idx.iter().enumerate().map(|(i, &v)| v * strides[axes[i]]).sum();
        out.push(x[src]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// One case per differentiable tape op.
pub fn all_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = SeedStream::new(seed);
    let r = &mut rng;
    let mut cases = Vec::new();

    let (m, k, n) = (3, 4, 5);
    cases.push(OpCase {
        name: "matmul",
        inputs: vec![(vec![m, k], uniform(r, m * k, -2.0, 2.0)), (vec![k, n], uniform(r, k * n, -2.0, 2.0))],
        build: Box::new(|t, v| t.matmul(v[0], v[1])),
        shadow: Box::new(move |x| matmul64(&x[0], &x[1], m, k, n)),
    });

    let bsz = 2;
    cases.push(OpCase {
        name: "bmm",
        inputs: vec![
            (vec![bsz, m, k], uniform(r, bsz * m * k, -2.0, 2.0)),
            (vec![bsz, k, n], uniform(r, bsz * k * n, -2.0, 2.0)),
        ],
        build: Box::new(|t, v| t.bmm(v[0], v[1])),
        shadow: Box::new(move |x| {
            (0..bsz)
                .flat_map(|b| matmul64(&x[0][b * m * k..(b + 1) * m * k], &x[1][b * k * n..(b + 1) * k * n], m, k, n))
                .collect()
        }),
    });

    cases.push(OpCase {
        name: "add",
        inputs: vec![(vec![3, 4], uniform(r, 12, -2.0, 2.0)), (vec![3, 4], uniform(r, 12, -2.0, 2.0))],
        build: Box::new(|t, v| t.add(v[0], v[1])),
        shadow: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
    });

    cases.push(OpCase {
        name: "mul",
        inputs: vec![(vec![3, 4], uniform(r, 12, -2.0, 2.0)), (vec![3, 4], uniform(r, 12, -2.0, 2.0))],
        build: Box::new(|t, v| t.mul(v[0], v[1])),
        shadow: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
    });

    cases.push(OpCase {
        name: "add_bias",
        inputs: vec![(vec![3, 4], uniform(r, 12, -2.0, 2.0)), (vec![4], uniform(r, 4, -2.0, 2.0))],
        build: Box::new(|t, v| t.add_bias(v[0], v[1])),
        shadow: Box::new(|x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % 4]).collect()),
    });

    cases.push(OpCase {
        name: "scale",
        inputs: vec![(vec![2, 5], uniform(r, 10, -2.0, 2.0))],
        build: Box::new(|t, v| t.scale(v[0], 0.37)),
        shadow: Box::new(|x| x[0].iter().map(|a| a * f64::from(0.37f32)).collect()),
    });

    cases.push(OpCase {
        name: "relu",
        inputs: vec![(vec![3, 5], away_from_zero(r, 15, 0.01))],
        build: Box::new(|t, v| t.relu(v[0])),
        shadow: Box::new(|x| x[0].iter().map(|a| a.max(0.0)).collect()),
    });

    cases.push(OpCase {
        name: "sigmoid",
        inputs: vec![(vec![3, 5], uniform(r, 15, -2.0, 2.0))],
        build: Box::new(|t, v| t.sigmoid(v[0])),
        shadow: Box::new(|x| x[0].iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect()),
    });

    cases.push(OpCase {
        name: "softmax_lastdim",
        inputs: vec![(vec![3, 6], uniform(r, 18, -2.0, 2.0))],
        build: Box::new(|t, v| t.softmax_lastdim(v[0])),
        shadow: Box::new(|x| x[0].chunks(6).flat_map(softmax64).collect()),
    });

    let d = 6;
    cases.push(OpCase {
        name: "layer_norm",
        inputs: vec![
            (vec![3, d], uniform(r, 3 * d, -2.0, 2.0)),
            (vec![d], uniform(r, d, 0.5, 1.5)),
            (vec![d], uniform(r, d, -0.5, 0.5)),
        ],
        build: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        shadow: Box::new(move |x| {
            x[0].chunks(d)
                .flat_map(|row| {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + 1e-5).sqrt();
                    (0..d).map(move |j| x[1][j] * (row[j] - mean) * inv + x[2][j]).collect::<Vec<_>>()
                })
                .collect()
        }),
    });

    let mask: Vec<f32> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.9 }).collect();
    let mask64: Vec<f64> = mask.iter().map(|&v| f64::from(v)).collect();
    cases.push(OpCase {
        name: "dropout_mask_apply",
        inputs: vec![(vec![3, 4], uniform(r, 12, -2.0, 2.0))],
        build: Box::new(move |t, v| t.dropout_mask_apply(v[0], mask.clone())),
        shadow: Box::new(move |x| x[0].iter().zip(&mask64).map(|(a, m)| a * m).collect()),
    });

    cases.push(OpCase {
        name: "mean_lastdim",
        inputs: vec![(vec![2, 3, 4], uniform(r, 24, -2.0, 2.0))],
        build: Box::new(|t, v| t.mean_lastdim(v[0])),
        shadow: Box::new(|x| x[0].chunks(4).map(|c| c.iter().sum::<f64>() / 4.0).collect()),
    });

    cases.push(OpCase {
        name: "sum_all",
        inputs: vec![(vec![2, 5], uniform(r, 10, -2.0, 2.0))],
        build: Box::new(|t, v| t.sum_all(v[0])),
        shadow: Box::new(|x| vec![x[0].iter().sum()]),
    });

    cases.push(OpCase {
        name: "permute",
        inputs: vec![(vec![2, 3, 4], uniform(r, 24, -2.0, 2.0))],
        build: Box::new(|t, v| t.permute(v[0], &[2, 0, 1])),
        shadow: Box::new(|x| permute64(&x[0], &[2, 3, 4], &[2, 0, 1])),
    });

    cases.push(OpCase {
        name: "transpose_last2",
        inputs: vec![(vec![2, 3, 4], uniform(r, 24, -2.0, 2.0))],
        build: Box::new(|t, v| t.transpose_last2(v[0])),
        shadow: Box::new(|x| permute64(&x[0], &[2, 3, 4], &[0, 2, 1])),
    });

    cases.push(OpCase {
        name: "reshape",
        inputs: vec![(vec![2, 6], uniform(r, 12, -2.0, 2.0))],
        build: Box::new(|t, v| t.reshape(v[0], &[3, 4])),
        shadow: Box::new(|x| x[0].clone()),
    });

    let ids = vec![2u32, 0, 2, 4, 1];
    let ids64 = ids.clone();
    cases.push(OpCase {
        name: "embedding_lookup",
        inputs: vec![(vec![5, 3], uniform(r, 15, -2.0, 2.0))],
        build: Box::new(move |t, v| t.embedding_lookup(v[0], &ids)),
        shadow: Box::new(move |x| ids64.iter().flat_map(|&i| x[0][i as usize * 3..i as usize * 3 + 3].to_vec()).collect()),
    });

    let pool_mask = vec![1.0f32, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
    let pool_mask64 = pool_mask.clone();
    cases.push(OpCase {
        name: "masked_mean_pool",
        inputs: vec![(vec![2, 4, 3], uniform(r, 24, -2.0, 2.0))],
        build: Box::new(move |t, v| t.masked_mean_pool(v[0], &pool_mask)),
        shadow: Box::new(move |x| {
            let mut out = vec![0.0; 6];
            for b in 0..2 {
                let m = &pool_mask64[b * 4..b * 4 + 4];
                let count: f64 = m.iter().map(|&v| f64::from(v)).sum();
                for ti in 0..4 {
                    for j in 0..3 {
                        out[b * 3 + j] += f64::from(m[ti]) * x[0][(b * 4 + ti) * 3 + j] / count;
                    }
                }
            }
            out
        }),
    });

    let labels = vec![1.0f32, 0.0, 1.0, 0.0, 1.0];
    let weights = vec![2.0f32, 1.0, 0.5, 1.0, 3.0];
    let (l64, w64) = (labels.clone(), weights.clone());
    cases.push(OpCase {
        name: "bce_loss",
        inputs: vec![(vec![5], uniform(r, 5, 0.05, 0.95))],
        build: Box::new(move |t, v| t.bce_loss(v[0], &labels, Some(&weights))),
        shadow: Box::new(move |x| {
            let total: f64 = x[0]
                .iter()
                .zip(&l64)
                .zip(&w64)
                .map(|((p, &y), &w)| {
                    let y = f64::from(y);
                    -f64::from(w) * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            vec![total / x[0].len() as f64]
        }),
    });

    cases
}
