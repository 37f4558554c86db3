use crate::error::{Error, Result};
use crate::model::{forward, register_params, Mode};
use crate::model::reference::ReferenceModel;
use crate::model::{Positional, ToxicityModel};
use crate::rng::SeedStream;
use crate::tensor::Tape;
use crate::tokenizer::PaddedBatch;

/// Central-difference step, applied to the fp64 reference.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that parameters whose true
/// gradient is numerically zero compare on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    /// Distinct weight tensors sampled.
    pub tensors_covered: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Tape gradients (inference mode, no dropout) of the mean BCE loss for
/// every weight tensor, in checkpoint order.
pub fn loss_gradients(model: &ToxicityModel, batch: &PaddedBatch, labels: &[f32]) -> Result<(f32, Vec<Vec<f32>>)> {
    let mut tape = Tape::new();
    let params = register_params(&mut tape, model);
    let out = forward(&mut tape, &params, model, batch, Mode::Infer)?;
    let loss = tape.bce_loss(out.probs, labels, None)?;
    tape.backward(loss)?;
    let value = tape.data(loss)[0];
    let grads = params
        .ordered()
        .into_iter()
        .map(|v| tape.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();
    Ok((value, grads))
}

/// Compares tape gradients against fp64 central differences at `n_samples`
/// parameters, visiting weight tensors round-robin. Embedding samples are
/// drawn from rows the batch actually touches.
pub fn grad_check(
    model: &ToxicityModel,
    batch: &PaddedBatch,
    labels: &[f32],
    n_samples: usize,
    rng: &mut SeedStream,
) -> Result<GradCheckReport> {
    if n_samples == 0 {
        return Err(Error::Contract("grad_check needs at least one sample".into()));
    }
    let (_, grads) = loss_gradients(model, batch, labels)?;
    let mut reference = ReferenceModel::from_model(model);
    let names: Vec<String> = reference.tensors().iter().map(|t| t.name.clone()).collect();
    let d = model.config.d_model;
    let mut used_tokens: Vec<u32> = batch.ids.clone();
    used_tokens.sort_unstable();
    used_tokens.dedup();

    let mut samples = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let ti = s % names.len();
        let numel = reference.tensors()[ti].data.len();
        let index = if ti == 0 {
            used_tokens[rng.below(used_tokens.len())] as usize * d + rng.below(d)
        } else if ti == 1 && model.config.positional == Positional::Learned {
            rng.below(batch.len) * d + rng.below(d)
        } else {
            rng.below(numel)
        };
        let original = reference.tensors()[ti].data[index];
        *reference.value_mut(ti, index) = original + FD_STEP;
        let up = reference.loss(batch, labels)?;
        *reference.value_mut(ti, index) = original - FD_STEP;
        let down = reference.loss(batch, labels)?;
        *reference.value_mut(ti, index) = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = f64::from(grads[ti][index]);
        samples.push(GradSample {
            tensor: names[ti].clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors_covered: n_samples.min(names.len()),
        samples,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::{pad_batch, train_vocab};

    fn model() -> ToxicityModel {
        let vocab = train_vocab(["you are an idiot", "what a lovely day"], 280).unwrap();
        ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(11)).unwrap()
    }

    #[test]
    fn zero_samples_is_an_error() {
        let m = model();
        let batch = m.encode_batch(&["hi"]).unwrap();
        assert!(grad_check(&m, &batch, &[1.0], 0, &mut SeedStream::new(1)).is_err());
    }

    #[test]
    fn all_pad_ids_give_finite_gradients() {
        let m = model();
        let batch = PaddedBatch {
            ids: vec![0; 8],
            mask: vec![1.0; 8],
            batch: 2,
            len: 4,
        };
        let (loss, grads) = loss_gradients(&m, &batch, &[0.0, 1.0]).unwrap();
        assert!(loss.is_finite());
        assert!(grads.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn small_check_agrees() {
        let m = model();
        let seqs: Vec<_> = ["you idiot", "lovely day indeed"]
            .iter()
            .map(|t| m.vocab.encode(t, 512).unwrap())
            .collect();
        let batch = pad_batch(&seqs).unwrap();
        let r = grad_check(&m, &batch, &[1.0, 0.0], 70, &mut SeedStream::new(2)).unwrap();
        assert_eq!(r.tensors_covered, 67);
        assert!(r.max_rel_error < 1e-2, "max rel error {}", r.max_rel_error);
    }
}
