use super::{LayerWeights, ToxicityModel, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{Tape, Var};
use crate::tokenizer::PaddedBatch;

/// Whether dropout is active. Training carries the stream its masks come from.
pub enum Mode<'r> {
    Train(&'r mut SeedStream),
    Infer,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

/// Tape handles for every weight, in checkpoint order via [`ParamVars::ordered`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub token_embedding: Var,
    /// Learned table (trainable) or the sinusoidal table (constant).
    pub positional: Var,
    pub learned_positional: bool,
    pub layers: Vec<LayerVars>,
    pub classifier_w: Var,
    pub classifier_b: Var,
}

impl ParamVars {
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding];
        if self.learned_positional {
            out.push(self.positional);
        }
        for l in &self.layers {
            out.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_gamma, l.ln1_beta, l.w1, l.b1, l.w2, l.b2,
                l.ln2_gamma, l.ln2_beta,
            ]);
        }
        out.push(self.classifier_w);
        out.push(self.classifier_b);
        out
    }
}

fn register_layer<'a>(tape: &mut Tape<'a>, w: &'a LayerWeights) -> LayerVars {
    LayerVars {
        wq: tape.borrowed(&w.wq),
        bq: tape.borrowed(&w.bq),
        wk: tape.borrowed(&w.wk),
        bk: tape.borrowed(&w.bk),
        wv: tape.borrowed(&w.wv),
        bv: tape.borrowed(&w.bv),
        wo: tape.borrowed(&w.wo),
        bo: tape.borrowed(&w.bo),
        ln1_gamma: tape.borrowed(&w.ln1_gamma),
        ln1_beta: tape.borrowed(&w.ln1_beta),
        w1: tape.borrowed(&w.w1),
        b1: tape.borrowed(&w.b1),
        w2: tape.borrowed(&w.w2),
        b2: tape.borrowed(&w.b2),
        ln2_gamma: tape.borrowed(&w.ln2_gamma),
        ln2_beta: tape.borrowed(&w.ln2_beta),
    }
}

/// Records every weight of `model` as a borrowed leaf.
pub fn register_params<'a>(tape: &mut Tape<'a>, model: &'a ToxicityModel) -> ParamVars {
    let w = &model.weights;
    let token_embedding = tape.borrowed(&w.token_embedding);
    let (positional, learned_positional) = match &w.positional_table {
        Some(table) => (tape.borrowed(table), true),
        None => (tape.borrowed(model.sinusoid()), false),
    };
    let layers = w.layers.iter().map(|l| register_layer(tape, l)).collect();
    ParamVars {
        token_embedding,
        positional,
        learned_positional,
        layers,
        classifier_w: tape.borrowed(&w.classifier_w),
        classifier_b: tape.borrowed(&w.classifier_b),
    }
}

pub struct ForwardOutput {
    /// `[B]` probabilities.
    pub probs: Var,
    /// `[B, 1]` pre-sigmoid scores.
    pub logits: Var,
    /// Per layer, `[B * heads, T, T]` attention weights.
    pub attention: Vec<Var>,
}

struct Dims {
    b: usize,
    t: usize,
    d: usize,
    heads: usize,
    head_dim: usize,
}

/// `[B*T, d] → [B*heads, T, head_dim]`.
fn split_heads(tape: &mut Tape<'_>, x: Var, dims: &Dims) -> Result<Var> {
    let x = tape.reshape(x, &[dims.b, dims.t, dims.heads, dims.head_dim])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[dims.b * dims.heads, dims.t, dims.head_dim])
}

/// Inverse of [`split_heads`].
fn merge_heads(tape: &mut Tape<'_>, x: Var, dims: &Dims) -> Result<Var> {
    let x = tape.reshape(x, &[dims.b, dims.heads, dims.t, dims.head_dim])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[dims.b * dims.t, dims.d])
}

fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Multi-head self-attention over `x: [B*T, d]`. Returns the projected
/// output and the attention weights.
fn self_attention(
    tape: &mut Tape<'_>,
    x: Var,
    key_mask: Var,
    l: &LayerVars,
    dims: &Dims,
) -> Result<(Var, Var)> {
    let q = linear(tape, x, l.wq, l.bq)?;
    let k = linear(tape, x, l.wk, l.bk)?;
    let v = linear(tape, x, l.wv, l.bv)?;
    let (q, k, v) = (split_heads(tape, q, dims)?, split_heads(tape, k, dims)?, split_heads(tape, v, dims)?);
    let kt = tape.transpose_last2(k)?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dims.head_dim as f32).sqrt())?;
    let scores = tape.add(scores, key_mask)?;
    let weights = tape.softmax_lastdim(scores)?;
    let context = tape.bmm(weights, v)?;
    let context = merge_heads(tape, context, dims)?;
    Ok((linear(tape, context, l.wo, l.bo)?, weights))
}

/// Post-norm encoder layer: `h = LN1(x + Attn(x))`, `out = LN2(h + FF(h))`.
fn encoder_layer(
    tape: &mut Tape<'_>,
    x: Var,
    key_mask: Var,
    l: &LayerVars,
    dims: &Dims,
    dropout: f32,
    rng: &mut Option<&mut SeedStream>,
) -> Result<(Var, Var)> {
    let (attn, weights) = self_attention(tape, x, key_mask, l, dims)?;
    let attn = tape.dropout(attn, dropout, rng.as_deref_mut())?;
    let h = tape.add(x, attn)?;
    let h = tape.layer_norm(h, l.ln1_gamma, l.ln1_beta, LAYER_NORM_EPS)?;

    let f = linear(tape, h, l.w1, l.b1)?;
    let f = tape.relu(f)?;
    let f = linear(tape, f, l.w2, l.b2)?;
    let f = tape.dropout(f, dropout, rng.as_deref_mut())?;
    let out = tape.add(h, f)?;
    let out = tape.layer_norm(out, l.ln2_gamma, l.ln2_beta, LAYER_NORM_EPS)?;
    Ok((out, weights))
}

/// Additive attention mask `[B*heads, T, T]`: `-inf` on PAD keys, 0 elsewhere.
fn key_mask_values(mask: &[f32], b: usize, t: usize, heads: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(b * heads * t * t);
    for bi in 0..b {
        let row: Vec<f32> = mask[bi * t..(bi + 1) * t]
            .iter()
            .map(|&m| if m > 0.0 { 0.0 } else { f32::NEG_INFINITY })
            .collect();
        for _ in 0..heads * t {
            out.extend_from_slice(&row);
        }
    }
    out
}

/// Full network on a padded batch.
pub fn forward<'a>(
    tape: &mut Tape<'a>,
    params: &ParamVars,
    model: &ToxicityModel,
    batch: &PaddedBatch,
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let cfg = &model.config;
    let (b, t) = (batch.batch, batch.len);
    if t > cfg.max_len {
        return Err(Error::Contract(format!("sequence length {t} exceeds max_len {}", cfg.max_len)));
    }
    if batch.ids.len() != b * t || batch.mask.len() != b * t {
        return Err(Error::shape("forward", &[b, t], &[batch.ids.len()]));
    }
    let dims = Dims {
        b,
        t,
        d: cfg.d_model,
        heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let mut rng = match mode {
        Mode::Train(r) => Some(r),
        Mode::Infer => None,
    };

    let positions: Vec<u32> = (0..b).flat_map(|_| 0..t as u32).collect();
    let tok = tape.embedding_lookup(params.token_embedding, &batch.ids)?;
    let pos = tape.embedding_lookup(params.positional, &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = tape.dropout(x, cfg.dropout_rate, rng.as_deref_mut())?;

    let key_mask = key_mask_values(&batch.mask, b, t, dims.heads);
    let key_mask = tape.constant(vec![b * dims.heads, t, t], key_mask)?;

    let mut attention = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (out, weights) = encoder_layer(tape, x, key_mask, l, &dims, cfg.dropout_rate, &mut rng)?;
        attention.push(weights);
        x = out;
    }

    let x = tape.reshape(x, &[b, t, dims.d])?;
    let pooled = tape.masked_mean_pool(x, &batch.mask)?;
    let pooled = tape.dropout(pooled, cfg.dropout_rate, rng)?;
    let logits = linear(tape, pooled, params.classifier_w, params.classifier_b)?;
    let probs = tape.sigmoid(logits)?;
    let probs = tape.reshape(probs, &[b])?;
    Ok(ForwardOutput {
        probs,
        logits,
        attention,
    })
}

impl ToxicityModel {
    /// Runs only the self-attention sublayer of `layer` on `x: [B*T, d]`
    /// (inference). Returns the projected output `[B*T, d]` and the attention
    /// weights `[B*heads, T, T]`.
    pub fn attention_sublayer(
        &self,
        layer: usize,
        x: &crate::tensor::Tensor,
        mask: &[f32],
        b: usize,
        t: usize,
    ) -> Result<(crate::tensor::Tensor, crate::tensor::Tensor)> {
        let cfg = &self.config;
        if layer >= cfg.n_layers || x.shape() != [b * t, cfg.d_model] || mask.len() != b * t {
            return Err(Error::shape("attention_sublayer", x.shape(), &[b * t, cfg.d_model]));
        }
        let dims = Dims {
            b,
            t,
            d: cfg.d_model,
            heads: cfg.n_heads,
            head_dim: cfg.head_dim(),
        };
        let mut tape = Tape::new();
        let vars = register_layer(&mut tape, &self.weights.layers[layer]);
        let xv = tape.borrowed(x);
        let key_mask = key_mask_values(mask, b, t, dims.heads);
        let key_mask = tape.constant(vec![b * dims.heads, t, t], key_mask)?;
        let (out, weights) = self_attention(&mut tape, xv, key_mask, &vars, &dims)?;
        Ok((tape.value(out).clone(), tape.value(weights).clone()))
    }
}
