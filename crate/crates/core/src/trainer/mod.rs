//! Supervised, staged training from labeled data.
//!
//! Every stage shuffles its dataset once per epoch from its own seed and
//! draws dropout masks from a stream derived per step, so a plan replayed
//! with the same seeds produces a byte-identical checkpoint.

mod gradcheck;
mod optim;
mod plan;

use std::ops::ControlFlow;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Deserialize;

use crate::datasets::{contamination_check, ContaminationConfig, DatasetFormat, LabeledExample};
use crate::error::{Error, Result};
use crate::evalbench::{evaluate, EvalReport};
use crate::model::{forward, register_params, Mode};
use crate::model::{ToxicityModel, DEFAULT_THRESHOLD};
use crate::rng::SeedStream;
use crate::tensor::Tape;
use crate::tokenizer::{pad_batch, PaddedBatch, TokenSequence};

pub use gradcheck::{grad_check, loss_gradients, relative_error, GradCheckReport, GradSample, FD_STEP, REL_ERROR_FLOOR};
pub use optim::{OptimizerState, DEFAULT_LEARNING_RATE};
pub use plan::{BenchmarkRef, ModelOverrides, StagePlan};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    #[default]
    Base,
    /// Further training on a curated hard-case set; no special algorithm.
    TargetedOverfit,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStageConfig {
    pub name: String,
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub purpose: Purpose,
    /// Loss weight on positive examples; off when absent.
    #[serde(default)]
    pub pos_weight: Option<f32>,
}

fn default_lr() -> f32 {
    DEFAULT_LEARNING_RATE
}

impl TrainStageConfig {
    pub fn new(name: impl Into<String>, epochs: usize, batch_size: usize, learning_rate: f32, seed: u64) -> Self {
        Self {
            name: name.into(),
            dataset: PathBuf::new(),
            format: DatasetFormat::Labeled,
            epochs,
            batch_size,
            learning_rate,
            seed,
            purpose: Purpose::Base,
            pos_weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config(format!("stage `{}`: epochs must be at least 1", self.name)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("stage `{}`: batch_size must be at least 1", self.name)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("stage `{}`: learning_rate must be positive", self.name)));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("stage `{}`: pos_weight must be positive", self.name)));
            }
        }
        Ok(())
    }
}

/// Position of a batch within a run, for diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchTag {
    pub stage: usize,
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub inputs: PaddedBatch,
    pub labels: Vec<f32>,
    pub weights: Option<Vec<f32>>,
    pub example_ids: Vec<String>,
    pub tag: BatchTag,
}

impl TrainBatch {
    pub fn from_examples(model: &ToxicityModel, examples: &[LabeledExample]) -> Result<Self> {
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        Ok(Self {
            inputs: model.encode_batch(&texts)?,
            labels: examples.iter().map(|e| f32::from(e.label)).collect(),
            weights: None,
            example_ids: examples.iter().map(|e| e.id.clone()).collect(),
            tag: BatchTag::default(),
        })
    }
}

/// Forward in training mode, BCE, backward, Adam. Returns the batch loss.
pub fn train_step(
    model: &mut ToxicityModel,
    optimizer: &mut OptimizerState,
    batch: &TrainBatch,
    dropout: &mut SeedStream,
) -> Result<f32> {
    if batch.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    let (loss, grads) = {
        let mut tape = Tape::new();
        let params = register_params(&mut tape, model);
        let out = forward(&mut tape, &params, model, &batch.inputs, Mode::Train(dropout))?;
        let loss = tape.bce_loss(out.probs, &batch.labels, batch.weights.as_deref())?;
        let value = tape.data(loss)[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: batch.tag.stage,
                epoch: batch.tag.epoch,
                batch: batch.tag.batch,
                loss: value,
                ids: batch.example_ids.join(","),
            });
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<f32>> = params
            .ordered()
            .into_iter()
            .map(|v| tape.take_grad(v).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
            .collect();
        (value, grads)
    };
    optimizer.apply(&mut model.weights, &grads)?;
    debug_assert!(model.weights.all_finite(), "non-finite weight after step {:?}", batch.tag);
    Ok(loss)
}

/// Tokenizes in parallel; output order matches input order.
pub fn encode_examples(model: &ToxicityModel, examples: &[LabeledExample]) -> Result<Vec<TokenSequence>> {
    examples
        .par_iter()
        .map(|e| model.vocab.encode(&e.text, model.config.max_len))
        .collect()
}

/// Trains one stage; returns the mean loss of every epoch run. `on_epoch`
/// sees `(epoch, mean loss, model)` after each epoch and may stop the stage.
pub fn train_stage(
    model: &mut ToxicityModel,
    stage_index: usize,
    config: &TrainStageConfig,
    examples: &[LabeledExample],
    mut on_epoch: impl FnMut(usize, f32, &ToxicityModel) -> ControlFlow<()>,
) -> Result<Vec<f32>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Validation(format!("stage `{}` has no training examples", config.name)));
    }
    let encoded = encode_examples(model, examples)?;
    let mut optimizer = OptimizerState::new(&model.weights, config.learning_rate);
    let root = SeedStream::new(config.seed);
    let shuffle_root = root.derive("shuffle");
    let dropout_root = root.derive("dropout");
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        shuffle_root.derive_index(epoch as u64).shuffle(&mut order);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let seqs: Vec<TokenSequence> = chunk.iter().map(|&i| encoded[i].clone()).collect();
            let labels: Vec<f32> = chunk.iter().map(|&i| f32::from(examples[i].label)).collect();
            let batch = TrainBatch {
                inputs: pad_batch(&seqs)?,
                weights: config
                    .pos_weight
                    .map(|w| labels.iter().map(|&y| if y == 1.0 { w } else { 1.0 }).collect()),
                labels,
                example_ids: chunk.iter().map(|&i| examples[i].id.clone()).collect(),
                tag: BatchTag {
                    stage: stage_index,
                    epoch,
                    batch: bi,
                },
            };
            let mut dropout = dropout_root.derive_index(step);
            let loss = train_step(model, &mut optimizer, &batch, &mut dropout)?;
            total += f64::from(loss) * chunk.len() as f64;
            count += chunk.len();
            step += 1;
        }
        let mean = (total / count as f64) as f32;
        losses.push(mean);
        if on_epoch(epoch, mean, model).is_break() {
            break;
        }
    }
    Ok(losses)
}

pub struct StageInput {
    pub config: TrainStageConfig,
    pub examples: Vec<LabeledExample>,
}

pub struct BenchmarkInput {
    pub name: String,
    pub examples: Vec<LabeledExample>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Train even when a stage dataset overlaps a benchmark.
    pub skip_contamination_check: bool,
    pub contamination: ContaminationConfig,
    pub threshold: f32,
    /// Stage checkpoints go to `{prefix}.stage-{NN}-{name}`; none when absent.
    pub checkpoint_prefix: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            skip_contamination_check: false,
            contamination: ContaminationConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            checkpoint_prefix: None,
        }
    }
}

/// One row of the append-only metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub stage: String,
    pub epoch: usize,
    pub loss: f32,
    /// Mean benchmark accuracy; present on the last epoch of a stage.
    pub eval_accuracy: Option<f64>,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "stage,epoch,loss,eval_accuracy";

    pub fn to_csv_line(&self) -> String {
        let acc = self.eval_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        format!("{},{},{:.6},{}", self.stage, self.epoch + 1, self.loss, acc)
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub name: String,
    pub epoch_losses: Vec<f32>,
    pub eval: Vec<EvalReport>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub stages: Vec<StageOutcome>,
    pub metrics: Vec<MetricRow>,
}

/// Refuses contaminated training data, then runs stages in order, evaluating
/// every benchmark and writing a checkpoint after each stage.
pub fn run_stages(
    model: &mut ToxicityModel,
    stages: &[StageInput],
    benchmarks: &[BenchmarkInput],
    options: &RunOptions,
    mut on_metric: impl FnMut(&MetricRow),
) -> Result<RunSummary> {
    if stages.is_empty() {
        return Err(Error::Config("no stages to run".into()));
    }
    for s in stages {
        s.config.validate()?;
    }
    if !options.skip_contamination_check {
        for s in stages {
            for b in benchmarks {
                let report = contamination_check(&s.examples, &b.examples, &options.contamination);
                if !report.is_clean() {
                    return Err(Error::Contaminated {
                        benchmark: b.name.clone(),
                        exact: report.exact_matches.len(),
                        near: report.near_duplicates.len(),
                    });
                }
            }
        }
    }

    let mut summary = RunSummary {
        stages: Vec::with_capacity(stages.len()),
        metrics: Vec::new(),
    };
    for (si, stage) in stages.iter().enumerate() {
        let mut rows = Vec::with_capacity(stage.config.epochs);
        let losses = train_stage(model, si, &stage.config, &stage.examples, |epoch, loss, _| {
            rows.push(MetricRow {
                stage: stage.config.name.clone(),
                epoch,
                loss,
                eval_accuracy: None,
            });
            ControlFlow::Continue(())
        })?;
        let eval = benchmarks
            .iter()
            .map(|b| evaluate(&*model, &b.name, &b.examples, options.threshold))
            .collect::<Result<Vec<_>>>()?;
        if let (Some(last), false) = (rows.last_mut(), eval.is_empty()) {
            last.eval_accuracy = Some(eval.iter().map(|r| r.accuracy).sum::<f64>() / eval.len() as f64);
        }
        for row in &rows {
            on_metric(row);
        }
        let checkpoint = match &options.checkpoint_prefix {
            Some(prefix) => {
                let mut name = prefix.as_os_str().to_owned();
                name.push(format!(".stage-{:02}-{}", si + 1, stage.config.name));
                let path = PathBuf::from(name);
                model.save(&path)?;
                Some(path)
            }
            None => None,
        };
        summary.metrics.extend(rows);
        summary.stages.push(StageOutcome {
            name: stage.config.name.clone(),
            epoch_losses: losses,
            eval,
            checkpoint,
        });
    }
    Ok(summary)
}
