//! Accuracy evaluation, latency and memory benchmarks, emissions arithmetic
//! and report rendering.

mod emissions;
mod latency;
mod memory;
mod report;

use rayon::prelude::*;

use crate::datasets::LabeledExample;
use crate::error::{Error, Result};
use crate::model::{Label, ToxicityModel};

pub use emissions::{estimate_emissions, EmissionsEstimate};
pub use latency::{bench_latency, hardware_descriptor, summarize, BenchConfig, BenchReport, LatencyStats};
pub use memory::{bench_memory, measure_load_rss, resident_bytes, MemoryReport};
pub use report::{emit_report_tables, RenderedReport, ReportBundle, REFERENCE_LATENCY};

/// Anything that maps texts to toxicity probabilities.
pub trait Scorer: Sync {
    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f32>>;
}

impl Scorer for ToxicityModel {
    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f32>> {
        let batch = self.encode_batch(texts)?;
        self.predict_batch(&batch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub n_examples: usize,
    pub accuracy: f64,
    /// Mean of the per-class recalls.
    pub balanced_accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub threshold: f32,
}

impl EvalReport {
    pub fn from_counts(dataset: impl Into<String>, tp: usize, fp: usize, tn: usize, fn_: usize, threshold: f32) -> Self {
        let n = tp + fp + tn + fn_;
        let recall = |hit: usize, miss: usize| if hit + miss == 0 { 0.0 } else { hit as f64 / (hit + miss) as f64 };
        let classes = usize::from(tp + fn_ > 0) + usize::from(tn + fp > 0);
        Self {
            dataset: dataset.into(),
            n_examples: n,
            accuracy: if n == 0 { 0.0 } else { (tp + tn) as f64 / n as f64 },
            balanced_accuracy: if classes == 0 {
                0.0
            } else {
                (recall(tp, fn_) + recall(tn, fp)) / classes as f64
            },
            tp,
            fp,
            tn,
            fn_,
            threshold,
        }
    }
}

pub const EVAL_BATCH_SIZE: usize = 32;

/// Scores every example (in parallel batches) and tallies the confusion
/// matrix. Deterministic: batches are fixed by position.
pub fn evaluate<S: Scorer>(scorer: &S, dataset: &str, examples: &[LabeledExample], threshold: f32) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Validation(format!("dataset `{dataset}` has no examples to evaluate")));
    }
    let scores: Vec<Vec<f32>> = examples
        .par_chunks(EVAL_BATCH_SIZE)
        .map(|chunk| {
            let texts: Vec<&str> = chunk.iter().map(|e| e.text.as_str()).collect();
            scorer.score_batch(&texts)
        })
        .collect::<Result<_>>()?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (e, p) in examples.iter().zip(scores.into_iter().flatten()) {
        match (Label::from_probability(p, threshold), e.label) {
            (Label::Toxic, 1) => tp += 1,
            (Label::Toxic, _) => fp += 1,
            (Label::NonToxic, 0) => tn += 1,
            (Label::NonToxic, _) => fn_ += 1,
        }
    }
    Ok(EvalReport::from_counts(dataset, tp, fp, tn, fn_, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f32);
    impl Scorer for Constant {
        fn score_batch(&self, texts: &[&str]) -> Result<Vec<f32>> {
            Ok(vec![self.0; texts.len()])
        }
    }

    /// Scores 0.9 when the text contains "bad".
    struct Keyword;
    impl Scorer for Keyword {
        fn score_batch(&self, texts: &[&str]) -> Result<Vec<f32>> {
            Ok(texts.iter().map(|t| if t.contains("bad") { 0.9 } else { 0.1 }).collect())
        }
    }

    fn ex(i: usize, text: &str, label: u8) -> LabeledExample {
        LabeledExample::new(i.to_string(), text, label, "fixture").unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let data = vec![ex(0, "bad", 1), ex(1, "good", 0), ex(2, "so bad", 1), ex(3, "fine", 0)];
        let r = evaluate(&Keyword, "fixture", &data, 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.fp, r.fn_), (0, 0));
    }

    #[test]
    fn constant_half_is_all_toxic() {
        let data = vec![ex(0, "a", 1), ex(1, "b", 0), ex(2, "c", 0), ex(3, "d", 0)];
        let r = evaluate(&Constant(0.5), "fixture", &data, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 3, 0, 0));
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.balanced_accuracy, 0.5);
    }

    #[test]
    fn hand_tallied_fixture() {
        // Keyword scorer vs labels:
        //   "bad day" 1 → TP      "bad hair" 0 → FP     "lovely" 0 → TN
        //   "awful" 1 → FN        "bad bad" 1 → TP      "calm" 0 → TN
        //   "badge" 0 → FP        "nice" 0 → TN         "hateful" 1 → FN
        //   "bad" 1 → TP
        // TP 3, FP 2, TN 3, FN 2 → accuracy 6/10.
        let rows = [
            ("bad day", 1),
            ("bad hair", 0),
            ("lovely", 0),
            ("awful", 1),
            ("bad bad", 1),
            ("calm", 0),
            ("badge", 0),
            ("nice", 0),
            ("hateful", 1),
            ("bad", 1),
        ];
        let data: Vec<_> = rows.iter().enumerate().map(|(i, (t, l))| ex(i, t, *l)).collect();
        let r = evaluate(&Keyword, "fixture", &data, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (3, 2, 3, 2));
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        assert_eq!(r.tp + r.fp + r.tn + r.fn_, r.n_examples);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(evaluate(&Constant(0.1), "empty", &[], 0.5).is_err());
    }
}
