//! Labeled-data ingestion and train/benchmark contamination checks.

mod contamination;
mod loaders;
mod toy;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use contamination::{
    contamination_check, jaccard, normalize_for_matching, shingles, ContaminationConfig, ContaminationReport,
    Document, ExactMatch, MinHasher, NearDuplicate,
};
pub use toy::{hard_cases, toy_corpus};
pub use loaders::{
    detect_format, load_dataset, load_jigsaw_csv, load_labeled_csv, load_texts, load_toxigen, JIGSAW_LABEL_COLUMNS,
};

/// One `(text, binary label)` record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    /// 1 = toxic, 0 = non-toxic.
    pub label: u8,
    pub source: String,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8, source: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if label > 1 {
            return Err(Error::Validation(format!("label {label} is not binary")));
        }
        if text.trim().is_empty() {
            return Err(Error::Validation("example text is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            text,
            label,
            source: source.into(),
        })
    }
}

/// Unlabeled text, e.g. a benchmark test split without its labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

/// On-disk layouts the loaders understand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// `comment_text` plus the six Jigsaw label columns; toxic iff any is 1.
    Jigsaw,
    /// Human-annotated ToxiGen: `text` and `toxicity_human` on a 1–5 scale.
    Toxigen,
    /// Raw ToxiGen generations: `generation` and `prompt_label` (0/1).
    ToxigenRaw,
    /// Plain `text,label` with an optional `id` column.
    Labeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    /// Annotated ToxiGen rows with mean toxicity at or above this are toxic.
    pub toxigen_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { toxigen_threshold: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Loader output. `examples.len() + rejects.len() == total_rows`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: String,
    pub examples: Vec<LabeledExample>,
    pub rejects: Vec<Reject>,
    pub total_rows: usize,
    /// SHA-256 of the file bytes.
    pub sha256: String,
}

impl Dataset {
    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.examples.len() - self.positives()
    }

    /// Plain-text manifest: counts, label balance and checksum.
    pub fn manifest(&self) -> String {
        let n = self.examples.len().max(1) as f64;
        let mut out = String::new();
        writeln!(out, "source: {}", self.source).unwrap();
        writeln!(out, "total_rows: {}", self.total_rows).unwrap();
        writeln!(out, "parsed: {}", self.examples.len()).unwrap();
        writeln!(out, "rejected: {}", self.rejects.len()).unwrap();
        writeln!(out, "positives: {}", self.positives()).unwrap();
        writeln!(out, "negatives: {}", self.negatives()).unwrap();
        writeln!(out, "positive_rate: {:.4}", self.positives() as f64 / n).unwrap();
        writeln!(out, "sha256: {}", self.sha256).unwrap();
        out
    }

    pub fn rejects_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "id", "reason"])?;
        for r in &self.rejects {
            w.write_record([r.row.to_string().as_str(), r.id.as_deref().unwrap_or(""), &r.reason])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub(crate) fn source_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Deterministic split: every `k`-th example of each class goes to the
/// second half, so both halves keep the label ratio.
pub fn stratified_split(examples: &[LabeledExample], holdout_every: usize) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let (mut train, mut held) = (Vec::new(), Vec::new());
    let mut seen = [0usize; 2];
    for e in examples {
        let c = &mut seen[e.label as usize];
        *c += 1;
        if holdout_every > 0 && *c % holdout_every == 0 {
            held.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, held)
}

/// Downsamples the majority class so both labels are equally frequent,
/// keeping original order.
pub fn balance(examples: &[LabeledExample]) -> Vec<LabeledExample> {
    let pos = examples.iter().filter(|e| e.label == 1).count();
    let keep = pos.min(examples.len() - pos);
    let mut taken = [0usize; 2];
    examples
        .iter()
        .filter(|e| {
            let t = &mut taken[e.label as usize];
            *t += 1;
            *t <= keep
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, label: u8) -> LabeledExample {
        LabeledExample::new(id.to_string(), format!("text {id}"), label, "t").unwrap()
    }

    #[test]
    fn example_validation() {
        assert!(LabeledExample::new("a", "  ", 0, "s").is_err());
        assert!(LabeledExample::new("a", "x", 2, "s").is_err());
    }

    #[test]
    fn balance_and_split_keep_ratios() {
        let data: Vec<_> = (0..30).map(|i| ex(i, u8::from(i % 3 == 0))).collect();
        let b = balance(&data);
        assert_eq!(b.iter().filter(|e| e.label == 1).count(), 10);
        assert_eq!(b.len(), 20);
        let (tr, te) = stratified_split(&b, 5);
        assert_eq!(te.len(), 4);
        assert_eq!(tr.len(), 16);
        assert_eq!(te.iter().filter(|e| e.label == 1).count(), 2);
    }
}
