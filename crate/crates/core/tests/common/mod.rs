//! Fixtures shared by the integration and acceptance targets.
#![allow(dead_code)]

pub mod opcheck;

use std::sync::OnceLock;

use ttd::datasets::LabeledExample;
use ttd::model::{ModelConfig, ToxicityModel};
use ttd::rng::SeedStream;
use ttd::tokenizer::{train_vocab, Vocabulary, DEFAULT_VOCAB_SIZE};

/// Random lowercase pseudo-words, `words` per line.
pub fn pseudo_text(rng: &mut SeedStream, words: usize) -> String {
    (0..words)
        .map(|_| {
            let len = 3 + rng.below(8);
            (0..len).map(|_| (b'a' + rng.below(26) as u8) as char).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A vocabulary of exactly the default size, trained on pseudo-words once
/// per test binary.
pub fn full_size_vocab() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(build_full_size_vocab)
}

fn build_full_size_vocab() -> Vocabulary {
    let mut rng = SeedStream::new(30_522);
    let corpus: Vec<String> = (0..4000).map(|_| pseudo_text(&mut rng, 12)).collect();
    let vocab = train_vocab(&corpus, DEFAULT_VOCAB_SIZE).expect("vocab");
    assert_eq!(vocab.len(), DEFAULT_VOCAB_SIZE, "pseudo-word corpus too small");
    vocab
}

pub fn default_model(seed: u64) -> ToxicityModel {
    ToxicityModel::initialize(ModelConfig::default(), full_size_vocab().clone(), &SeedStream::new(seed)).expect("model")
}

/// A compact model (default architecture) over a vocabulary fitted to `corpus`.
pub fn small_model(corpus: &[LabeledExample], vocab_size: usize, seed: u64) -> ToxicityModel {
    let vocab = train_vocab(corpus.iter().map(|e| e.text.as_str()), vocab_size).expect("vocab");
    ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(seed)).expect("model")
}
