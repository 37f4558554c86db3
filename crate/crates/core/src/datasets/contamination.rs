//! Exact and near-duplicate detection between a training set and a benchmark.
//!
//! Exact matches compare lowercased, whitespace-collapsed text. Near
//! duplicates are pairs whose word 5-gram shingle sets have Jaccard similarity
//! at or above the threshold; candidates come from MinHash signatures bucketed
//! by LSH bands and every candidate is verified with the exact Jaccard.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::{LabeledExample, TextRecord};
use crate::error::Result;
use crate::rng::mix64;

#[derive(Clone, Debug, PartialEq)]
pub struct ContaminationConfig {
    pub jaccard_threshold: f64,
    pub shingle_size: usize,
    pub num_perm: usize,
    /// LSH bands; `num_perm` must be a multiple.
    pub bands: usize,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.8,
            shingle_size: 5,
            num_perm: 128,
            bands: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactMatch {
    pub train_id: String,
    pub test_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NearDuplicate {
    pub train_id: String,
    pub test_id: String,
    pub jaccard: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContaminationReport {
    pub exact_matches: Vec<ExactMatch>,
    /// Pairs at or above the threshold that are not exact matches.
    pub near_duplicates: Vec<NearDuplicate>,
    pub config: ContaminationConfig,
    /// Candidate pairs the MinHash stage passed to exact verification.
    pub candidates_checked: usize,
}

impl ContaminationReport {
    pub fn is_clean(&self) -> bool {
        self.exact_matches.is_empty() && self.near_duplicates.is_empty()
    }

    /// `kind,train_id,test_id,score` rows; exact matches score 1.0.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "train_id", "test_id", "score"])?;
        for m in &self.exact_matches {
            w.write_record(["exact", &m.train_id, &m.test_id, "1.0000"])?;
        }
        for m in &self.near_duplicates {
            w.write_record(["near", &m.train_id, &m.test_id, &format!("{:.4}", m.jaccard)])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
    }
}

/// Lowercase and collapse runs of whitespace to single spaces.
pub fn normalize_for_matching(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn hash_words(words: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.bytes().chain(std::iter::once(0x1f)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    mix64(h)
}

/// Hashed word `k`-gram shingles of normalised text. Texts shorter than `k`
/// words form a single shingle; empty text has none.
pub fn shingles(normalized: &str, k: usize) -> HashSet<u64> {
    let words: Vec<&str> = normalized.split_whitespace().collect();
    if words.is_empty() {
        return HashSet::new();
    }
    if words.len() < k {
        return HashSet::from([hash_words(&words)]);
    }
    words.windows(k).map(hash_words).collect()
}

pub fn jaccard(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|x| large.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// MinHash over 64-bit shingle hashes with `h_i(x) = mix64(x ^ seed_i)`.
#[derive(Clone, Debug)]
pub struct MinHasher {
    seeds: Vec<u64>,
}

impl MinHasher {
    pub fn new(num_perm: usize) -> Self {
        Self {
            seeds: (0..num_perm as u64).map(|i| mix64(i.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0x5EED)).collect(),
        }
    }

    pub fn signature(&self, set: &HashSet<u64>) -> Vec<u64> {
        self.seeds
            .iter()
            .map(|&s| set.iter().map(|&x| mix64(x ^ s)).min().unwrap_or(u64::MAX))
            .collect()
    }
}

fn band_keys(sig: &[u64], bands: usize) -> Vec<(usize, u64)> {
    let rows = sig.len() / bands;
    sig.chunks_exact(rows)
        .enumerate()
        .map(|(b, chunk)| (b, chunk.iter().fold(0u64, |h, &v| mix64(h ^ v))))
        .collect()
}

/// Anything with an id and text that can be checked for overlap.
pub trait Document: Sync {
    fn doc_id(&self) -> &str;
    fn doc_text(&self) -> &str;
}

impl Document for LabeledExample {
    fn doc_id(&self) -> &str {
        &self.id
    }
    fn doc_text(&self) -> &str {
        &self.text
    }
}

impl Document for TextRecord {
    fn doc_id(&self) -> &str {
        &self.id
    }
    fn doc_text(&self) -> &str {
        &self.text
    }
}

pub fn contamination_check<A: Document, B: Document>(
    train: &[A],
    test: &[B],
    config: &ContaminationConfig,
) -> ContaminationReport {
    assert!(
        config.bands > 0 && config.num_perm.is_multiple_of(config.bands),
        "num_perm must be a positive multiple of bands"
    );
    let train_norm: Vec<String> = train.par_iter().map(|e| normalize_for_matching(e.doc_text())).collect();
    let test_norm: Vec<String> = test.par_iter().map(|e| normalize_for_matching(e.doc_text())).collect();

    let mut by_text: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in train_norm.iter().enumerate() {
        by_text.entry(t.as_str()).or_default().push(i);
    }

    let hasher = MinHasher::new(config.num_perm);
    let k = config.shingle_size;
    let train_sh: Vec<HashSet<u64>> = train_norm.par_iter().map(|t| shingles(t, k)).collect();
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let train_bands: Vec<Vec<(usize, u64)>> =
        train_sh.par_iter().map(|s| band_keys(&hasher.signature(s), config.bands)).collect();
    for (i, keys) in train_bands.into_iter().enumerate() {
        if train_sh[i].is_empty() {
            continue;
        }
        for key in keys {
            buckets.entry(key).or_default().push(i);
        }
    }

    let per_test: Vec<(Vec<ExactMatch>, Vec<NearDuplicate>, usize)> = test
        .par_iter()
        .enumerate()
        .map(|(ti, ex)| {
            let norm = &test_norm[ti];
            let exact_idx: Vec<usize> = by_text.get(norm.as_str()).cloned().unwrap_or_default();
            let exact = exact_idx
                .iter()
                .map(|&i| ExactMatch {
                    train_id: train[i].doc_id().to_string(),
                    test_id: ex.doc_id().to_string(),
                })
                .collect();
            let sh = shingles(norm, k);
            if sh.is_empty() {
                return (exact, Vec::new(), 0);
            }
            let mut cand: Vec<usize> = band_keys(&hasher.signature(&sh), config.bands)
                .into_iter()
                .filter_map(|key| buckets.get(&key))
                .flatten()
                .copied()
                .filter(|i| !exact_idx.contains(i))
                .collect();
            cand.sort_unstable();
            cand.dedup();
            let near = cand
                .iter()
                .filter_map(|&i| {
                    let j = jaccard(&train_sh[i], &sh);
                    (j >= config.jaccard_threshold).then(|| NearDuplicate {
                        train_id: train[i].doc_id().to_string(),
                        test_id: ex.doc_id().to_string(),
                        jaccard: j,
                    })
                })
                .collect();
            (exact, near, cand.len())
        })
        .collect();

    let mut report = ContaminationReport {
        exact_matches: Vec::new(),
        near_duplicates: Vec::new(),
        config: config.clone(),
        candidates_checked: 0,
    };
    for (exact, near, n) in per_test {
        report.exact_matches.extend(exact);
        report.near_duplicates.extend(near);
        report.candidates_checked += n;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, text: &str) -> LabeledExample {
        LabeledExample::new(id, text, 0, "t").unwrap()
    }

    #[test]
    fn normalization_collapses_whitespace() {
        assert_eq!(normalize_for_matching("  Hello\t\tWORLD \n"), "hello world");
    }

    #[test]
    fn shingle_edge_cases() {
        assert!(shingles("", 5).is_empty());
        assert_eq!(shingles("a b", 5).len(), 1);
        assert_eq!(shingles("a b c d e f g", 5).len(), 3);
    }

    #[test]
    fn jaccard_basic() {
        let a: HashSet<u64> = [1, 2, 3, 4].into();
        let b: HashSet<u64> = [3, 4, 5, 6].into();
        assert!((jaccard(&a, &b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn planted_exact_match() {
        let train = vec![ex("t1", "You are a   TERRIBLE person"), ex("t2", "nice weather today")];
        let test = vec![ex("s1", "you are a terrible person"), ex("s2", "completely unrelated words here")];
        let r = contamination_check(&train, &test, &ContaminationConfig::default());
        assert_eq!(
            r.exact_matches,
            vec![ExactMatch {
                train_id: "t1".into(),
                test_id: "s1".into()
            }]
        );
        assert!(r.near_duplicates.is_empty());
        assert!(r.to_csv().unwrap().contains("exact,t1,s1,1.0000"));
    }

    #[test]
    fn disjoint_corpora_are_clean() {
        let train = vec![ex("a", "the quick brown fox jumps over the lazy dog")];
        let test = vec![ex("b", "lorem ipsum dolor sit amet consectetur adipiscing elit")];
        assert!(contamination_check(&train, &test, &ContaminationConfig::default()).is_clean());
    }
}
