//! Seeded, splittable random streams.
//!
//! Every stochastic step (initialisation, shuffling, dropout) draws from a
//! [`SeedStream`] derived from a single run seed by a fixed path of labels, so
//! a run is reproducible regardless of how many numbers any other consumer drew.
//! Each stream is a ChaCha8 keystream, i.e. a counter-based generator keyed by
//! the derived seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a; stable across platforms and toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug)]
pub struct SeedStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by a label. Independent of how much of `self` was consumed.
    pub fn derive(&self, label: &str) -> SeedStream {
        SeedStream::new(mix64(self.seed ^ mix64(label_hash(label))))
    }

    /// Child stream keyed by an integer counter (step number, layer index, ...).
    pub fn derive_index(&self, index: u64) -> SeedStream {
        SeedStream::new(mix64(self.seed.rotate_left(17) ^ mix64(index ^ 0xA5A5_5A5A)))
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f32(&mut self) -> f32 {
        self.rng.gen::<f32>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        self.rng.gen_range(lo..hi)
    }

    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        use rand_distr::{Distribution, Normal};
        Normal::new(mean, std)
            .expect("std must be finite and non-negative")
            .sample(&mut self.rng)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}
