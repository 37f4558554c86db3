use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation's precondition.
    #[error("contract violated: {0}")]
    Contract(String),

    /// Input data failed validation (labels, probabilities, empty text).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column `{column}` in {path}")]
    Schema { path: PathBuf, column: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("non-finite loss {loss} at stage {stage}, epoch {epoch}, batch {batch} (example ids: {ids})")]
    NonFiniteLoss {
        stage: usize,
        epoch: usize,
        batch: usize,
        loss: f32,
        ids: String,
    },

    #[error("contamination detected: {exact} exact and {near} near-duplicate pairs against `{benchmark}`")]
    Contaminated {
        benchmark: String,
        exact: usize,
        near: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
