use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Purpose, TrainStageConfig};
use crate::datasets::DatasetFormat;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Stage plan, written as TOML:
///
/// ```toml
/// seed = 7
/// vocab = "vocab.txt"        # or `vocab_size = 8000` to train one from the stage data
///
/// [model]                    # optional overrides of the default architecture
/// positional = "learned"
///
/// [[benchmark]]
/// name = "toxigen"
/// dataset = "toxigen_test.csv"
/// format = "toxigen"
///
/// [[stage]]
/// name = "base"
/// dataset = "jigsaw_train.csv"
/// format = "jigsaw"
/// epochs = 3
/// batch_size = 32
/// learning_rate = 1e-3
/// seed = 1
/// ```
///
/// Relative dataset and vocabulary paths resolve against the data directory.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    #[serde(default)]
    pub seed: u64,
    pub vocab: Option<PathBuf>,
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default, rename = "benchmark")]
    pub benchmarks: Vec<BenchmarkRef>,
    #[serde(rename = "stage")]
    pub stages: Vec<TrainStageConfig>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout_rate: Option<f32>,
    pub positional: Option<crate::model::Positional>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRef {
    pub name: String,
    pub dataset: PathBuf,
    pub format: DatasetFormat,
}

impl ModelOverrides {
    pub fn apply(&self, mut config: ModelConfig) -> ModelConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { config.$f = v; })* };
        }
        set!(n_layers, n_heads, d_model, d_ff, max_len, dropout_rate, positional);
        config
    }
}

impl StagePlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: StagePlan = toml::from_str(text).map_err(|e| Error::Config(format!("stage plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("stage plan lists no stages".into()));
        }
        match (&self.vocab, self.vocab_size) {
            (Some(_), Some(_)) => return Err(Error::Config("set either `vocab` or `vocab_size`, not both".into())),
            (None, None) => return Err(Error::Config("stage plan needs `vocab` or `vocab_size`".into())),
            _ => {}
        }
        for s in &self.stages {
            s.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.apply(ModelConfig::default())
    }

    /// Whether any stage is a targeted-overfit pass.
    pub fn has_overfit_stage(&self) -> bool {
        self.stages.iter().any(|s| s.purpose == Purpose::TargetedOverfit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Positional;

    const PLAN: &str = r#"
seed = 3
vocab_size = 400

[model]
positional = "learned"

[[benchmark]]
name = "held-out"
dataset = "test.csv"
format = "labeled"

[[stage]]
name = "base"
dataset = "train.csv"
format = "jigsaw"
epochs = 2
batch_size = 8
learning_rate = 0.001
seed = 1

[[stage]]
name = "hard-cases"
dataset = "hard.csv"
format = "labeled"
epochs = 5
batch_size = 4
learning_rate = 0.0005
seed = 2
purpose = "targeted-overfit"
"#;

    #[test]
    fn parses_a_two_stage_plan() {
        let plan = StagePlan::from_toml(PLAN).unwrap();
        assert_eq!(plan.seed, 3);
        assert_eq!(plan.stages.len(), 2);
        assert_eq!(plan.stages[0].purpose, Purpose::Base);
        assert_eq!(plan.stages[1].purpose, Purpose::TargetedOverfit);
        assert_eq!(plan.stages[1].format, DatasetFormat::Labeled);
        assert_eq!(plan.benchmarks[0].name, "held-out");
        assert_eq!(plan.model_config().positional, Positional::Learned);
        assert!(plan.has_overfit_stage());
    }

    #[test]
    fn rejects_invalid_stages() {
        assert!(StagePlan::from_toml(&PLAN.replace("epochs = 2", "epochs = 0")).is_err());
        assert!(StagePlan::from_toml(&PLAN.replace("batch_size = 8", "batch_size = 0")).is_err());
        assert!(StagePlan::from_toml(&PLAN.replace("learning_rate = 0.001", "learning_rate = 0.0")).is_err());
        assert!(StagePlan::from_toml(&PLAN.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
        assert!(StagePlan::from_toml("seed = 1\nvocab_size = 300\n").is_err());
    }
}
