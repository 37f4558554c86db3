use std::borrow::Cow;

use super::kernels::{matmul_grad_lhs, matmul_grad_rhs, matmul_into, softmax_rows};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f32 },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Dropout { x: Var, mask: Vec<f32> },
    MeanLastDim { x: Var },
    SumAll { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Embedding { table: Var, ids: Vec<u32> },
    MaskedMeanPool { x: Var, mask: Vec<f32> },
    Bce {
        p: Var,
        labels: Vec<f32>,
        weights: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Wengert list for one forward/backward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// Leaves may borrow their tensors (model weights) for the lifetime of the
/// tape; gradients live on the tape until taken.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f32>>>,
}

/// Probability clamp applied inside the BCE loss.
pub const BCE_EPS: f32 = 1e-7;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let t = Tensor::new(shape, data).expect("op produced an inconsistent tensor");
        self.push(Cow::Owned(t), op, requires_grad)
    }

    /// Records an owned leaf; it participates in backward iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(Cow::Owned(tensor), Op::Leaf, rg)
    }

    /// Records a borrowed leaf without copying its data.
    pub fn borrowed(&mut self, tensor: &'a Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(Cow::Borrowed(tensor), Op::Leaf, rg)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads[v.0].take()
    }

    // ---------------------------------------------------------------- ops

    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push_owned(vec![m, n], out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched product `[s,m,k] · [s,k,n] → [s,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (s, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; s * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..s {
            matmul_into(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push_owned(vec![s, m, n], out, Op::BatchMatMul { a, b }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        Ok(self.push_owned(self.shape(a).to_vec(), out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        Ok(self.push_owned(self.shape(a).to_vec(), out, Op::Mul { a, b }, &[a, b]))
    }

    /// Adds a `[d]` bias to every last-axis slice of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(d) {
            row.iter_mut().zip(b).for_each(|(o, bj)| *o += bj);
        }
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::Scale { x, factor }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v.max(0.0)).collect();
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::Relu { x }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::Sigmoid { x }, &[x]))
    }

    /// Softmax over the last axis, stabilised by max subtraction. A slice that
    /// is entirely `-inf` has no distribution and yields NaN.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        let mut out = vec![0.0; self.value(x).numel()];
        softmax_rows(self.data(x), &mut out, n);
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::Softmax { x }, &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xd = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut normalized = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let nh = (row[j] - mean) * is;
                normalized[r * d + j] = nh;
                out[r * d + j] = g[j] * nh + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        };
        Ok(self.push_owned(self.shape(x).to_vec(), out, op, &[x, gamma, beta]))
    }

    /// Multiplies `x` by a fixed mask (already scaled for inverted dropout).
    pub fn dropout_mask_apply(&mut self, x: Var, mask: Vec<f32>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("dropout_mask_apply", self.shape(x), &[mask.len()]));
        }
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push_owned(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, &[x]))
    }

    /// Inverted dropout. With `rng == None` (inference) or `rate == 0` this is
    /// the identity and records nothing.
    pub fn dropout(&mut self, x: Var, rate: f32, rng: Option<&mut SeedStream>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.next_f32() < rate { 0.0 } else { keep })
            .collect();
        self.dropout_mask_apply(x, mask)
    }

    /// Mean over the last axis; `[..., n] → [...]` (a rank-1 input gives `[1]`).
    pub fn mean_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = *shape.last().unwrap();
        let out_shape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        let out = self.data(x).chunks_exact(n).map(|r| r.iter().sum::<f32>() / n as f32).collect();
        Ok(self.push_owned(out_shape, out, Op::MeanLastDim { x }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        Ok(self.push_owned(vec![1], vec![s], Op::SumAll { x }, &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Contract(format!("permute: {axes:?} is not a permutation of rank {}", shape.len())));
        }
        let (out, out_shape) = permute_data(self.data(x), shape, axes);
        Ok(self.push_owned(out_shape, out, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        if r < 2 {
            return Err(Error::Contract("transpose_last2 needs rank >= 2".into()));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push_owned(shape.to_vec(), data, Op::Reshape { x }, &[x]))
    }

    /// Gathers rows of a `[V,d]` table: `ids.len()` rows of width `d`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape("embedding_lookup", shape, &[ids.len()]));
        }
        let (v, d) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(Error::Contract("embedding_lookup needs at least one id".into()));
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::Validation(format!("token id {bad} outside vocabulary of {v}")));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&td[id as usize * d..(id as usize + 1) * d]);
        }
        let op = Op::Embedding { table, ids: ids.to_vec() };
        Ok(self.push_owned(vec![ids.len(), d], out, op, &[table]))
    }

    /// Average of `x[b,t,:]` over positions with `mask[b,t] = 1`; `[B,T,D] → [B,D]`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[f32]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return Err(Error::shape("masked_mean_pool", shape, &[mask.len()]));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; b * d];
        let mut weights = vec![0.0; b * t];
        for bi in 0..b {
            let m = &mask[bi * t..(bi + 1) * t];
            let count: f32 = m.iter().sum();
            if count <= 0.0 {
                return Err(Error::Validation(format!("sequence {bi} has no content positions")));
            }
            for ti in 0..t {
                let w = m[ti] / count;
                weights[bi * t + ti] = w;
                if w == 0.0 {
                    continue;
                }
                let row = &xd[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                out[bi * d..(bi + 1) * d].iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
            }
        }
        let op = Op::MaskedMeanPool { x, mask: weights };
        Ok(self.push_owned(vec![b, d], out, op, &[x]))
    }

    /// Binary cross-entropy averaged over the batch, probabilities clamped to
    /// `[1e-7, 1 - 1e-7]`. `weights` scales each example's term.
    pub fn bce_loss(&mut self, p: Var, labels: &[f32], weights: Option<&[f32]>) -> Result<Var> {
        let pd = self.data(p);
        if pd.len() != labels.len() {
            return Err(Error::shape("bce_loss", self.shape(p), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation(format!("label {bad} is not 0 or 1")));
        }
        let weights = match weights {
            Some(w) if w.len() != labels.len() => {
                return Err(Error::shape("bce_loss weights", &[labels.len()], &[w.len()]))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; labels.len()],
        };
        let n = labels.len() as f32;
        let loss = pd
            .iter()
            .zip(labels)
            .zip(&weights)
            .map(|((&p, &y), &w)| {
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f32>()
            / n;
        let op = Op::Bce {
            p,
            labels: labels.to_vec(),
            weights,
        };
        Ok(self.push_owned(vec![1], vec![loss], op, &[p]))
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar. Gradients accumulate additively when a
    /// value feeds several consumers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Self { nodes, grads } = self;
        grads.iter_mut().for_each(|g| *g = None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, node, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Returns `(data, shape)` of `x` with axes reordered.
fn permute_data(data: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    loop {
        let base: usize = idx[..rank - 1].iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        // Advance the outer multi-index.
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return (out, out_shape);
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn slot<'g>(nodes: &[Node<'_>], grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut Vec<f32>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node<'_>], grads: &mut [Option<Vec<f32>>], node: &Node<'_>, g: &[f32]) {
    let val = |v: Var| nodes[v.0].value.as_ref();
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k, n) = (val(*a).shape()[0], val(*a).shape()[1], val(*b).shape()[1]);
            if let Some(da) = slot(nodes, grads, *a) {
                matmul_grad_lhs(g, val(*b).data(), da, m, k, n);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                matmul_grad_rhs(val(*a).data(), g, db, m, k, n);
            }
        }
        Op::BatchMatMul { a, b } => {
            let sa = val(*a).shape();
            let (s, m, k, n) = (sa[0], sa[1], sa[2], val(*b).shape()[2]);
            if let Some(da) = slot(nodes, grads, *a) {
                let bd = val(*b).data();
                for i in 0..s {
                    matmul_grad_lhs(
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * k * n..(i + 1) * k * n],
                        &mut da[i * m * k..(i + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let ad = val(*a).data();
                for i in 0..s {
                    matmul_grad_rhs(
                        &ad[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut db[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        Op::Add { a, b } => {
            for v in [*a, *b] {
                if let Some(d) = slot(nodes, grads, v) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Mul { a, b } => {
            if let Some(da) = slot(nodes, grads, *a) {
                let bd = val(*b).data();
                da.iter_mut().zip(g).zip(bd).for_each(|((d, g), y)| *d += g * y);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let ad = val(*a).data();
                db.iter_mut().zip(g).zip(ad).for_each(|((d, g), x)| *d += g * x);
            }
        }
        Op::AddBias { x, bias } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(db) = slot(nodes, grads, *bias) {
                let d = db.len();
                for row in g.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Scale { x, factor } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor);
            }
        }
        Op::Relu { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut()
                    .zip(g)
                    .zip(out)
                    .for_each(|((d, g), y)| if *y > 0.0 { *d += g });
            }
        }
        Op::Sigmoid { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut()
                    .zip(g)
                    .zip(out)
                    .for_each(|((d, g), y)| *d += g * y * (1.0 - y));
            }
        }
        Op::Softmax { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let n = node.value.last_dim();
                for ((d, gr), y) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.chunks_exact(n)) {
                    let s: f32 = gr.iter().zip(y).map(|(g, y)| g * y).sum();
                    for j in 0..n {
                        d[j] += y[j] * (gr[j] - s);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let d = node.value.last_dim();
            if let Some(dg) = slot(nodes, grads, *gamma) {
                for (gr, nh) in g.chunks_exact(d).zip(normalized.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] += gr[j] * nh[j];
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, *beta) {
                for gr in g.chunks_exact(d) {
                    db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                }
            }
            let gm = val(*gamma).data();
            if let Some(dx) = slot(nodes, grads, *x) {
                let mut dxhat = vec![0.0; d];
                for r in 0..inv_std.len() {
                    let gr = &g[r * d..(r + 1) * d];
                    let nh = &normalized[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * gm[j];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f32>() / d as f32;
                    let mean_dxhat_nh = dxhat.iter().zip(nh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
                    let dr = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        dr[j] += inv_std[r] * (dxhat[j] - mean_dxhat - nh[j] * mean_dxhat_nh);
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).zip(mask).for_each(|((d, g), m)| *d += g * m);
            }
        }
        Op::MeanLastDim { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let n = val(*x).last_dim();
                let inv = 1.0 / n as f32;
                for (row, gv) in dx.chunks_exact_mut(n).zip(g) {
                    row.iter_mut().for_each(|d| *d += gv * inv);
                }
            }
        }
        Op::SumAll { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Permute { x, axes } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inverse);
                dx.iter_mut().zip(back).for_each(|(d, g)| *d += g);
            }
        }
        Op::Reshape { x } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(dt) = slot(nodes, grads, *table) {
                let d = val(*table).shape()[1];
                for (row, &id) in g.chunks_exact(d).zip(ids) {
                    let id = id as usize;
                    dt[id * d..(id + 1) * d].iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::MaskedMeanPool { x, mask } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let s = val(*x).shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                for bi in 0..b {
                    let gr = &g[bi * d..(bi + 1) * d];
                    for ti in 0..t {
                        let w = mask[bi * t + ti];
                        if w == 0.0 {
                            continue;
                        }
                        dx[(bi * t + ti) * d..(bi * t + ti + 1) * d]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(dv, gv)| *dv += w * gv);
                    }
                }
            }
        }
        Op::Bce { p, labels, weights } => {
            if let Some(dp) = slot(nodes, grads, *p) {
                let pd = val(*p).data();
                let n = labels.len() as f32;
                for i in 0..labels.len() {
                    // Straight-through clamp: the derivative is taken at the
                    // clamped probability so saturated outputs still learn.
                    let pc = pd[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                    let y = labels[i];
                    dp[i] += g[0] * weights[i] / n * (-y / pc + (1.0 - y) / (1.0 - pc));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let mut tape = Tape::new();
        let i = tape.leaf(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = tape.leaf(t(&[2, 2], &[3., 4., 5., 6.]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.data(c), &[3., 4., 5., 6.]);

        let r = tape.leaf(t(&[1, 2], &[1., 2.]));
        let col = tape.leaf(t(&[2, 1], &[3., 4.]));
        let c = tape.matmul(r, col).unwrap();
        assert_eq!(tape.data(c), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0., 0., 0.]));
        let y = tape.softmax_lastdim(x).unwrap();
        for v in tape.data(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let x = tape.leaf(t(&[2], &[1000., 0.]));
        let y = tape.softmax_lastdim(x).unwrap();
        assert_eq!(tape.data(y), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_fp64_evaluation() {
        // exp(k - 3) / Σ exp(j - 3), evaluated in f64.
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_8];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]));
        let y = tape.softmax_lastdim(x).unwrap();
        for (got, want) in tape.data(y).iter().zip(expected) {
            assert!((f64::from(*got) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_degenerate_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[5., 5., 5., -1., -1., -1.]));
        let ones = tape.leaf(Tensor::full(&[3], 1.0));
        let zeros = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));

        let x = tape.leaf(t(&[1, 3], &[1., 2., 7.]));
        let g = tape.leaf(Tensor::zeros(&[3]));
        let b = tape.leaf(Tensor::full(&[3], 0.25));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.data(y), &[0.25; 3]);
    }

    #[test]
    fn elementwise_cases() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.data(s), &[0.5]);

        let p = tape.leaf(Tensor::scalar(0.5));
        let l = tape.bce_loss(p, &[1.0], None).unwrap();
        assert!((tape.data(l)[0] - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(matches!(tape.bce_loss(p, &[0.5], None), Err(Error::Validation(_))));
    }

    #[test]
    fn bce_clamps_saturated_probabilities() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2], &[0.0, 1.0]).with_grad(true));
        let l = tape.bce_loss(p, &[1.0, 0.0], None).unwrap();
        let v = tape.data(l)[0];
        assert!(v.is_finite() && v > 15.0);
        tape.backward(l).unwrap();
        assert!(tape.grad(p).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1., 2., 3., 4.]));
        let mut rng = SeedStream::new(3);
        assert_eq!(tape.dropout(x, 0.0, Some(&mut rng)).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, None).unwrap(), x);
        assert!(tape.dropout(x, 1.0, None).is_err());
        let y = tape.dropout(x, 0.5, Some(&mut rng)).unwrap();
        for (o, i) in tape.data(y).iter().zip([1., 2., 3., 4.]) {
            assert!(*o == 0.0 || *o == 2.0 * i);
        }
    }

    #[test]
    fn identity_backward_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_grad(true));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn reused_tensor_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., -2., 4.]).with_grad(true));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]).with_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let x = tape.leaf(t(&[2, 3, 4], &data));
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        // y[k, i, j] = x[i, j, k]
        assert_eq!(tape.data(y)[6 + 3 + 2], data[12 + 2 * 4 + 1]);
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.data(z), &data[..]);
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn masked_pool_excludes_padding() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3, 2], &[1., 2., 3., 4., 100., 100.]));
        let y = tape.masked_mean_pool(x, &[1., 1., 0.]).unwrap();
        assert_eq!(tape.data(y), &[2., 3.]);
        assert!(tape.masked_mean_pool(x, &[0., 0., 0.]).is_err());
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::zeros(&[4, 2]));
        assert!(tape.embedding_lookup(table, &[4]).is_err());
        let e = tape.embedding_lookup(table, &[3, 0, 3]).unwrap();
        assert_eq!(tape.shape(e), &[3, 2]);
    }
}
