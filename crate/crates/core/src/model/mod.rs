//! The detector network and its parameters.
//!
//! ```text
//! ids ─► token embedding + positional encoding ─► dropout
//!     ─► 4 × [ h = LN1(x + Attn(x)); x = LN2(h + FF(h)) ]
//!     ─► masked mean pool ─► dropout ─► linear(64 → 1) ─► sigmoid
//! ```

mod checkpoint;
mod forward;
pub mod reference;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;
use crate::tokenizer::{pad_batch, PaddedBatch, Vocabulary, DEFAULT_VOCAB_SIZE, MAX_SEQ_LEN};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, register_params, ForwardOutput, Mode, ParamVars};

pub const LAYER_NORM_EPS: f32 = 1e-5;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Sinusoidal,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f32,
    pub positional: Positional,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 2,
            d_model: 64,
            d_ff: 128,
            max_len: MAX_SEQ_LEN,
            vocab_size: DEFAULT_VOCAB_SIZE,
            dropout_rate: 0.1,
            positional: Positional::Sinusoidal,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("layer, head and width counts must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model {} must be even for positional encoding", self.d_model));
        }
        if self.max_len == 0 || self.max_len > MAX_SEQ_LEN {
            return fail(format!("max_len {} outside [1, {MAX_SEQ_LEN}]", self.max_len));
        }
        if self.vocab_size < 3 {
            return fail(format!("vocab_size {} leaves no content tokens", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars for `config`.
pub fn count_params(config: &ModelConfig) -> usize {
    let (d, ff) = (config.d_model, config.d_ff);
    let attention = 4 * (d * d + d);
    let feed_forward = (d * ff + ff) + (ff * d + d);
    let norms = 4 * d;
    let positional = match config.positional {
        Positional::Learned => config.max_len * d,
        Positional::Sinusoidal => 0,
    };
    config.vocab_size * d + positional + config.n_layers * (attention + feed_forward + norms) + d + 1
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(…)`.
pub fn positional_encoding(max_len: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) || max_len == 0 {
        return Err(Error::Config(format!("positional encoding needs even d > 0 and max_len > 0, got d={d}, max_len={max_len}")));
    }
    let mut data = vec![0.0f32; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin() as f32;
            data[pos * d + 2 * i + 1] = angle.cos() as f32;
        }
    }
    Tensor::new(vec![max_len, d], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

const LAYER_TENSOR_NAMES: [&str; 16] = [
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln1.gamma",
    "ln1.beta", "ff.w1", "ff.b1", "ff.w2", "ff.b2", "ln2.gamma", "ln2.beta",
];

impl LayerWeights {
    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_gamma,
            &self.ln1_beta, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_gamma, &self.ln2_beta,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

/// All trainable tensors. Matrices are stored `[in, out]` and applied as `x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub token_embedding: Tensor,
    /// Present only for [`Positional::Learned`].
    pub positional_table: Option<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub classifier_w: Tensor,
    pub classifier_b: Tensor,
}

fn xavier(rng: &mut SeedStream, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(vec![fan_in, fan_out], data).unwrap().with_grad(true)
}

fn param(shape: &[usize], value: f32) -> Tensor {
    Tensor::full(shape, value).with_grad(true)
}

impl ModelWeights {
    /// Xavier-uniform matrices, zero biases, unit LayerNorm gains and
    /// `N(0, 0.1²)`-ish token embeddings, all drawn from `rng`.
    pub fn init(config: &ModelConfig, rng: &SeedStream) -> Result<Self> {
        config.validate()?;
        let (d, ff) = (config.d_model, config.d_ff);
        let mut emb_rng = rng.derive("token_embedding");
        let emb = (0..config.vocab_size * d).map(|_| emb_rng.normal(0.0, 0.1)).collect();
        let positional_table = match config.positional {
            Positional::Learned => {
                let mut r = rng.derive("positional_table");
                let data = (0..config.max_len * d).map(|_| r.normal(0.0, 0.1)).collect();
                Some(Tensor::new(vec![config.max_len, d], data)?.with_grad(true))
            }
            Positional::Sinusoidal => None,
        };
        let layers = (0..config.n_layers)
            .map(|i| {
                let mut r = rng.derive("layer").derive_index(i as u64);
                LayerWeights {
                    wq: xavier(&mut r, d, d),
                    bq: param(&[d], 0.0),
                    wk: xavier(&mut r, d, d),
                    bk: param(&[d], 0.0),
                    wv: xavier(&mut r, d, d),
                    bv: param(&[d], 0.0),
                    wo: xavier(&mut r, d, d),
                    bo: param(&[d], 0.0),
                    ln1_gamma: param(&[d], 1.0),
                    ln1_beta: param(&[d], 0.0),
                    w1: xavier(&mut r, d, ff),
                    b1: param(&[ff], 0.0),
                    w2: xavier(&mut r, ff, d),
                    b2: param(&[d], 0.0),
                    ln2_gamma: param(&[d], 1.0),
                    ln2_beta: param(&[d], 0.0),
                }
            })
            .collect();
        let mut cls_rng = rng.derive("classifier");
        Ok(Self {
            token_embedding: Tensor::new(vec![config.vocab_size, d], emb)?.with_grad(true),
            positional_table,
            layers,
            classifier_w: xavier(&mut cls_rng, d, 1),
            classifier_b: param(&[1], 0.0),
        })
    }

    /// Tensors in checkpoint order with their names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        if let Some(p) = &self.positional_table {
            out.push(("positional_table".to_string(), p));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSOR_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("classifier.w".to_string(), &self.classifier_w));
        out.push(("classifier.b".to_string(), &self.classifier_b));
        out
    }

    /// Mutable tensors in the same order as [`ModelWeights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding];
        if let Some(p) = &mut self.positional_table {
            out.push(p);
        }
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    /// Expected `(name, shape)` list for `config`, in checkpoint order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, ff) = (config.d_model, config.d_ff);
        let mut out = vec![("token_embedding".to_string(), vec![config.vocab_size, d])];
        if config.positional == Positional::Learned {
            out.push(("positional_table".to_string(), vec![config.max_len, d]));
        }
        let layer_shapes: [Vec<usize>; 16] = [
            vec![d, d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d],
            vec![d], vec![d], vec![d, ff], vec![ff], vec![ff, d], vec![d], vec![d], vec![d],
        ];
        for i in 0..config.n_layers {
            for (name, shape) in LAYER_TENSOR_NAMES.iter().zip(layer_shapes.iter()) {
                out.push((format!("layers.{i}.{name}"), shape.clone()));
            }
        }
        out.push(("classifier.w".to_string(), vec![d, 1]));
        out.push(("classifier.b".to_string(), vec![1]));
        out
    }

    /// Rebuilds weights from tensors given in checkpoint order.
    pub fn from_ordered(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = Self::layout(config);
        if tensors.len() != layout.len() {
            return Err(Error::Format {
                what: "checkpoint",
                reason: format!("expected {} tensors, found {}", layout.len(), tensors.len()),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format {
                    what: "checkpoint",
                    reason: format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                });
            }
        }
        let mut it = tensors.into_iter().map(|t| t.with_grad(true));
        let token_embedding = it.next().unwrap();
        let positional_table = (config.positional == Positional::Learned).then(|| it.next().unwrap());
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut n = || it.next().unwrap();
                LayerWeights {
                    wq: n(),
                    bq: n(),
                    wk: n(),
                    bk: n(),
                    wv: n(),
                    bv: n(),
                    wo: n(),
                    bo: n(),
                    ln1_gamma: n(),
                    ln1_beta: n(),
                    w1: n(),
                    b1: n(),
                    w2: n(),
                    b2: n(),
                    ln2_gamma: n(),
                    ln2_beta: n(),
                }
            })
            .collect();
        Ok(Self {
            token_embedding,
            positional_table,
            layers,
            classifier_w: it.next().unwrap(),
            classifier_b: it.next().unwrap(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Toxic,
    NonToxic,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Toxic => "toxic",
            Label::NonToxic => "non-toxic",
        })
    }
}

impl Label {
    /// `p ≥ threshold` is toxic.
    pub fn from_probability(p: f32, threshold: f32) -> Self {
        if p >= threshold {
            Label::Toxic
        } else {
            Label::NonToxic
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probability: f32,
}

/// A trained (or freshly initialised) detector with its vocabulary.
///
/// Immutable once built; inference takes `&self` and may run on many threads.
#[derive(Clone, Debug)]
pub struct ToxicityModel {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub vocab: Vocabulary,
    /// Cached sinusoidal table, `[max_len, d_model]`.
    sinusoid: Tensor,
}

impl ToxicityModel {
    pub fn new(config: ModelConfig, weights: ModelWeights, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let expected = ModelWeights::layout(&config);
        let actual = weights.named();
        if expected.len() != actual.len()
            || expected.iter().zip(&actual).any(|((_, s), (_, t))| t.shape() != s.as_slice())
        {
            return Err(Error::Config("weights do not match the configuration".into()));
        }
        let sinusoid = positional_encoding(config.max_len, config.d_model)?;
        Ok(Self {
            config,
            weights,
            vocab,
            sinusoid,
        })
    }

    /// Fresh random weights sized to `vocab`.
    pub fn initialize(config: ModelConfig, vocab: Vocabulary, rng: &SeedStream) -> Result<Self> {
        let config = config.with_vocab_size(vocab.len());
        let weights = ModelWeights::init(&config, rng)?;
        Self::new(config, weights, vocab)
    }

    pub fn sinusoid(&self) -> &Tensor {
        &self.sinusoid
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<PaddedBatch> {
        let seqs = texts
            .iter()
            .map(|t| self.vocab.encode(t.as_ref(), self.config.max_len))
            .collect::<Result<Vec<_>>>()?;
        pad_batch(&seqs)
    }

    /// Inference-mode probabilities, one per row.
    pub fn predict_batch(&self, batch: &PaddedBatch) -> Result<Vec<f32>> {
        let mut tape = crate::tensor::Tape::new();
        let params = register_params(&mut tape, self);
        let out = forward(&mut tape, &params, self, batch, Mode::Infer)?;
        Ok(tape.data(out.probs).to_vec())
    }

    /// Per-layer attention weights `[batch * heads, T, T]` at inference.
    pub fn attention_maps(&self, batch: &PaddedBatch) -> Result<Vec<Tensor>> {
        let mut tape = crate::tensor::Tape::new();
        let params = register_params(&mut tape, self);
        let out = forward(&mut tape, &params, self, batch, Mode::Infer)?;
        Ok(out.attention.iter().map(|&a| tape.value(a).clone()).collect())
    }

    pub fn predict_proba(&self, text: &str) -> Result<f32> {
        let seq = self.vocab.encode(text, self.config.max_len)?;
        if seq.is_empty() {
            return Err(Error::Validation("empty input: no content tokens".into()));
        }
        let batch = pad_batch(&[seq])?;
        Ok(self.predict_batch(&batch)?[0])
    }

    pub fn predict(&self, text: &str, threshold: f32) -> Result<Prediction> {
        let probability = self.predict_proba(text)?;
        Ok(Prediction {
            label: Label::from_probability(probability, threshold),
            probability,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_budget() {
        let cfg = ModelConfig::default();
        assert_eq!(count_params(&cfg), 30_522 * 64 + 4 * 33_472 + 65);
        assert_eq!(count_params(&cfg), 2_087_361);
        let learned = ModelConfig {
            positional: Positional::Learned,
            ..cfg.clone()
        };
        assert_eq!(count_params(&learned), 2_120_129);
        assert_eq!(count_params(&cfg.clone().with_vocab_size(2)), 134_081);
    }

    #[test]
    fn initialised_weights_match_count() {
        for positional in [Positional::Sinusoidal, Positional::Learned] {
            let cfg = ModelConfig {
                positional,
                vocab_size: 300,
                ..Default::default()
            };
            let w = ModelWeights::init(&cfg, &SeedStream::new(1)).unwrap();
            assert_eq!(w.param_count(), count_params(&cfg));
            let layout = ModelWeights::layout(&cfg);
            let named = w.named();
            assert_eq!(layout.len(), named.len());
            for ((ln, ls), (n, t)) in layout.iter().zip(&named) {
                assert_eq!(ln, n);
                assert_eq!(ls.as_slice(), t.shape());
            }
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(512, 64).unwrap();
        let row0 = &pe.data()[..64];
        for i in 0..32 {
            assert_eq!(row0[2 * i], 0.0);
            assert_eq!(row0[2 * i + 1], 1.0);
        }
        assert!((pe.data()[64] - 1f32.sin()).abs() < 1e-7);
        assert!((pe.data()[64] - 0.841_470_98).abs() < 1e-6);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(4, 3).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert_eq!(ModelConfig::default().head_dim(), 32);
        let bad = [
            ModelConfig { n_heads: 3, ..Default::default() },
            ModelConfig { max_len: 513, ..Default::default() },
            ModelConfig { dropout_rate: 1.0, ..Default::default() },
            ModelConfig { d_model: 63, n_heads: 1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn threshold_boundary_is_toxic() {
        assert_eq!(Label::from_probability(0.5, 0.5), Label::Toxic);
        assert_eq!(Label::from_probability(0.499_999, 0.5), Label::NonToxic);
        assert_eq!(Label::Toxic.to_string(), "toxic");
        assert_eq!(Label::NonToxic.to_string(), "non-toxic");
    }
}
