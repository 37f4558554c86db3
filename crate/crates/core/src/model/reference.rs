//! Straight-line `f64` evaluation of the detector, written as nested loops
//! with no shared code from the tape path. Used as the oracle for gradient
//! checks and attention tests.

use super::{ModelConfig, ModelWeights, Positional, ToxicityModel};
use crate::error::{Error, Result};
use crate::tokenizer::PaddedBatch;

const LN_EPS: f64 = 1e-5;
const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct RefTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReferenceModel {
    config: ModelConfig,
    tensors: Vec<RefTensor>,
}

struct RefLayer<'m> {
    wq: &'m [f64],
    bq: &'m [f64],
    wk: &'m [f64],
    bk: &'m [f64],
    wv: &'m [f64],
    bv: &'m [f64],
    wo: &'m [f64],
    bo: &'m [f64],
    ln1_g: &'m [f64],
    ln1_b: &'m [f64],
    w1: &'m [f64],
    b1: &'m [f64],
    w2: &'m [f64],
    b2: &'m [f64],
    ln2_g: &'m [f64],
    ln2_b: &'m [f64],
}

/// `x[n, din] · w[din, dout] + b`.
fn affine(x: &[f64], w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let n = x.len() / din;
    let mut out = vec![0.0; n * dout];
    for r in 0..n {
        for o in 0..dout {
            let mut acc = b[o];
            for i in 0..din {
                acc += x[r * din + i] * w[i * dout + o];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.len() / d {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out[r * d + j] = g[j] * (row[j] - mean) / (var + LN_EPS).sqrt() + b[j];
        }
    }
    out
}

impl ReferenceModel {
    pub fn from_model(model: &ToxicityModel) -> Self {
        Self::from_weights(&model.config, &model.weights)
    }

    pub fn from_weights(config: &ModelConfig, weights: &ModelWeights) -> Self {
        let tensors = weights
            .named()
            .into_iter()
            .map(|(name, t)| RefTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&v| f64::from(v)).collect(),
            })
            .collect();
        Self {
            config: config.clone(),
            tensors,
        }
    }

    pub fn tensors(&self) -> &[RefTensor] {
        &self.tensors
    }

    pub fn value_mut(&mut self, tensor: usize, index: usize) -> &mut f64 {
        &mut self.tensors[tensor].data[index]
    }

    fn layer_offset(&self) -> usize {
        match self.config.positional {
            Positional::Learned => 2,
            Positional::Sinusoidal => 1,
        }
    }

    fn layer(&self, i: usize) -> RefLayer<'_> {
        let base = self.layer_offset() + 16 * i;
        let t = |k: usize| self.tensors[base + k].data.as_slice();
        RefLayer {
            wq: t(0),
            bq: t(1),
            wk: t(2),
            bk: t(3),
            wv: t(4),
            bv: t(5),
            wo: t(6),
            bo: t(7),
            ln1_g: t(8),
            ln1_b: t(9),
            w1: t(10),
            b1: t(11),
            w2: t(12),
            b2: t(13),
            ln2_g: t(14),
            ln2_b: t(15),
        }
    }

    fn positional(&self, pos: usize, j: usize) -> f64 {
        let d = self.config.d_model;
        match self.config.positional {
            Positional::Learned => self.tensors[1].data[pos * d + j],
            Positional::Sinusoidal => {
                let i = j / 2;
                let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                if j.is_multiple_of(2) {
                    angle.sin()
                } else {
                    angle.cos()
                }
            }
        }
    }

    /// Embedded input `[B*T, d]` before the first layer.
    pub fn embed(&self, batch: &PaddedBatch) -> Vec<f64> {
        let d = self.config.d_model;
        let emb = &self.tensors[0].data;
        let mut x = vec![0.0; batch.batch * batch.len * d];
        for bi in 0..batch.batch {
            for ti in 0..batch.len {
                let id = batch.ids[bi * batch.len + ti] as usize;
                for j in 0..d {
                    x[(bi * batch.len + ti) * d + j] = emb[id * d + j] + self.positional(ti, j);
                }
            }
        }
        x
    }

    /// Self-attention sublayer of layer `layer` on `x: [B*T, d]`.
    /// Returns the projected output and the weights `[B, heads, T, T]`.
    pub fn self_attention(&self, layer: usize, x: &[f64], mask: &[f32], b: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
        let (d, heads) = (self.config.d_model, self.config.n_heads);
        let hd = d / heads;
        let l = self.layer(layer);
        let q = affine(x, l.wq, l.bq, d, d);
        let k = affine(x, l.wk, l.bk, d, d);
        let v = affine(x, l.wv, l.bv, d, d);
        let mut ctx = vec![0.0; b * t * d];
        let mut weights = vec![0.0; b * heads * t * t];
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..t {
                    let mut scores = vec![f64::NEG_INFINITY; t];
                    for j in 0..t {
                        if mask[bi * t + j] == 0.0 {
                            continue;
                        }
                        let mut s = 0.0;
                        for c in 0..hd {
                            s += q[(bi * t + i) * d + h * hd + c] * k[(bi * t + j) * d + h * hd + c];
                        }
                        scores[j] = s / (hd as f64).sqrt();
                    }
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                    for j in 0..t {
                        let a = (scores[j] - max).exp() / z;
                        weights[((bi * heads + h) * t + i) * t + j] = a;
                        for c in 0..hd {
                            ctx[(bi * t + i) * d + h * hd + c] += a * v[(bi * t + j) * d + h * hd + c];
                        }
                    }
                }
            }
        }
        (affine(&ctx, l.wo, l.bo, d, d), weights)
    }

    fn encoder_layer(&self, layer: usize, x: &[f64], mask: &[f32], b: usize, t: usize) -> Vec<f64> {
        let (d, ff) = (self.config.d_model, self.config.d_ff);
        let l = self.layer(layer);
        let (attn, _) = self.self_attention(layer, x, mask, b, t);
        let res: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let h = layer_norm(&res, l.ln1_g, l.ln1_b, d);
        let mut f = affine(&h, l.w1, l.b1, d, ff);
        f.iter_mut().for_each(|v| *v = v.max(0.0));
        let f = affine(&f, l.w2, l.b2, ff, d);
        let res: Vec<f64> = h.iter().zip(&f).map(|(a, b)| a + b).collect();
        layer_norm(&res, l.ln2_g, l.ln2_b, d)
    }

    /// Probabilities, one per row (inference: no dropout).
    pub fn forward(&self, batch: &PaddedBatch) -> Result<Vec<f64>> {
        let (b, t, d) = (batch.batch, batch.len, self.config.d_model);
        let mut x = self.embed(batch);
        for layer in 0..self.config.n_layers {
            x = self.encoder_layer(layer, &x, &batch.mask, b, t);
        }
        let n = self.tensors.len();
        let (cw, cb) = (&self.tensors[n - 2].data, self.tensors[n - 1].data[0]);
        let mut probs = Vec::with_capacity(b);
        for bi in 0..b {
            let count: f64 = batch.mask[bi * t..(bi + 1) * t].iter().map(|&m| f64::from(m)).sum();
            if count == 0.0 {
                return Err(Error::Validation(format!("sequence {bi} has no content positions")));
            }
            let mut logit = cb;
            for j in 0..d {
                let mut pooled = 0.0;
                for ti in 0..t {
                    pooled += f64::from(batch.mask[bi * t + ti]) * x[(bi * t + ti) * d + j];
                }
                logit += pooled / count * cw[j];
            }
            probs.push(1.0 / (1.0 + (-logit).exp()));
        }
        Ok(probs)
    }

    /// Mean binary cross-entropy with the same probability clamp as training.
    pub fn loss(&self, batch: &PaddedBatch, labels: &[f32]) -> Result<f64> {
        let probs = self.forward(batch)?;
        let total: f64 = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                let y = f64::from(y);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        Ok(total / probs.len() as f64)
    }
}
