use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::ToxicityModel;
use crate::tokenizer::{PaddedBatch, BASE_VOCAB_SIZE};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![128, 512],
            runs: 100,
            warmup: 10,
        }
    }
}

/// Wall-clock statistics for one input length, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub tokens: usize,
    pub runs: usize,
    pub warmup: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    /// Probability of the synthetic input; identical across runs.
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub latency: Vec<LatencyStats>,
    pub param_count: usize,
    /// `param_count × 4`.
    pub weight_bytes: usize,
    /// Resident-set growth across model load, when measured.
    pub rss_delta_bytes: Option<u64>,
    pub hardware: String,
}

/// `(mean, median, p95)`; the median averages the middle pair and p95 is
/// nearest-rank, so `p95 ≥ median` always holds.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    assert!(!samples.is_empty(), "no samples to summarise");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (mean, median, sorted[rank - 1])
}

/// One synthetic sequence of exactly `tokens` content ids.
fn synthetic_input(model: &ToxicityModel, tokens: usize) -> PaddedBatch {
    let span = (model.config.vocab_size - 2).max(1);
    let ids = (0..tokens).map(|i| 2 + ((i * 7 + BASE_VOCAB_SIZE) % span) as u32).collect();
    PaddedBatch {
        ids,
        mask: vec![1.0; tokens],
        batch: 1,
        len: tokens,
    }
}

/// CPU, batch size 1, monotonic clock, warmups excluded from every statistic.
pub fn bench_latency(model: &ToxicityModel, config: &BenchConfig) -> Result<BenchReport> {
    if config.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let mut latency = Vec::with_capacity(config.lengths.len());
    for &tokens in &config.lengths {
        if tokens == 0 || tokens > model.config.max_len {
            return Err(Error::Config(format!(
                "benchmark length {tokens} outside [1, {}]",
                model.config.max_len
            )));
        }
        let input = synthetic_input(model, tokens);
        for _ in 0..config.warmup {
            std::hint::black_box(model.predict_batch(&input)?);
        }
        let mut samples = Vec::with_capacity(config.runs);
        let mut probability = None;
        for _ in 0..config.runs {
            let start = Instant::now();
            let p = std::hint::black_box(model.predict_batch(&input)?)[0];
            samples.push(start.elapsed().as_secs_f64());
            match probability {
                None => probability = Some(p),
                Some(prev) if prev.to_bits() != p.to_bits() => {
                    return Err(Error::Contract(format!("inference is not deterministic: {prev} vs {p}")));
                }
                Some(_) => {}
            }
        }
        let (mean_s, median_s, p95_s) = summarize(&samples);
        latency.push(LatencyStats {
            tokens,
            runs: config.runs,
            warmup: config.warmup,
            mean_s,
            median_s,
            p95_s,
            probability: probability.expect("runs >= 1"),
        });
    }
    Ok(BenchReport {
        latency,
        param_count: model.param_count(),
        weight_bytes: model.param_count() * 4,
        rss_delta_bytes: None,
        hardware: hardware_descriptor(),
    })
}

/// CPU model, architecture, logical core count and OS.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}; {} logical cores; {}-{}", cores, std::env::consts::ARCH, std::env::consts::OS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_statistics_coincide() {
        let (mean, median, p95) = summarize(&[0.25]);
        assert_eq!((mean, median, p95), (0.25, 0.25, 0.25));
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        let (mean, median, p95) = summarize(&samples);
        assert_eq!(mean, 50.5);
        assert_eq!(median, 50.5);
        assert_eq!(p95, 95.0);
    }
}
