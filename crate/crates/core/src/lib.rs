//! Compact toxic-comment detector.
//!
//! A 2.1M-parameter transformer encoder (4 post-norm layers, 2 heads,
//! `d_model = 64`, `d_ff = 128`) that maps text to the probability it is
//! toxic, together with everything needed to build and audit it: a small
//! reverse-mode autograd core, a byte-level BPE tokenizer, a staged trainer,
//! dataset loaders with contamination checks, and an evaluation and
//! benchmarking harness.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod evalbench;
pub mod rng;
pub mod tensor;
pub mod model;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
