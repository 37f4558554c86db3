use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::{apply_merge, normalize, split_chunks, Merge, Token, Vocabulary, BASE_VOCAB_SIZE};
use crate::error::{Error, Result};

type Pair = (u32, u32);

struct Word {
    symbols: Vec<u32>,
    count: i64,
}

/// Heap entry: highest count first, then the lexicographically smallest
/// `(left bytes, right bytes)`.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    count: i64,
    key: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: Pair,
}

/// Learns merges until the vocabulary holds `target_size` tokens (specials
/// included) or no adjacent pair is left to merge.
///
/// Deterministic in the corpus contents; ties go to the lexicographically
/// smallest pair of byte strings.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if target_size < BASE_VOCAB_SIZE {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} is below the byte-level base of {BASE_VOCAB_SIZE}"
        )));
    }
    let mut chunk_counts: HashMap<Vec<u8>, i64> = HashMap::new();
    let mut any_text = false;
    for text in corpus {
        let normalized = normalize(text.as_ref());
        any_text |= !normalized.is_empty();
        for chunk in split_chunks(&normalized) {
            *chunk_counts.entry(chunk.as_bytes().to_vec()).or_default() += 1;
        }
    }
    if !any_text {
        return Err(Error::Validation("cannot train a vocabulary on an empty corpus".into()));
    }

    let mut vocab = Vocabulary::byte_level();
    let mut tokens = vocab.tokens.clone();
    let mut token_to_id = vocab.token_to_id.clone();
    let mut merges = Vec::new();

    // Sorted so word indices (and therefore everything below) are reproducible.
    let mut chunks: Vec<_> = chunk_counts.into_iter().collect();
    chunks.sort_unstable();
    let mut words: Vec<Word> = chunks
        .into_iter()
        .map(|(bytes, count)| Word {
            symbols: bytes.iter().map(|&b| b as u32 + 2).collect(),
            count,
        })
        .collect();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.symbols.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_default() += w.count;
            pair_words.entry(pair).or_default().insert(wi);
        }
    }

    let candidate = |pair: Pair, count: i64, tokens: &[Token]| Candidate {
        count,
        key: Reverse((tokens[pair.0 as usize].bytes().to_vec(), tokens[pair.1 as usize].bytes().to_vec())),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&p, &c)| candidate(p, c, &tokens))
        .collect();

    while tokens.len() < target_size {
        let Some(best) = heap.pop() else { break };
        if pair_counts.get(&best.pair).copied() != Some(best.count) || best.count <= 0 {
            continue;
        }
        let (left, right) = best.pair;
        let mut joined = tokens[left as usize].bytes().to_vec();
        joined.extend_from_slice(tokens[right as usize].bytes());
        let joined = Token::Bytes(joined);
        let result = match token_to_id.get(&joined) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(joined.clone());
                token_to_id.insert(joined, id);
                id
            }
        };
        merges.push(Merge { left, right, result });

        let affected: Vec<usize> = pair_words.remove(&best.pair).into_iter().flatten().collect();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let w = &mut words[wi];
            for p in w.symbols.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.get_mut(&pair).expect("counted pair") -= w.count;
                touched.insert(pair);
            }
            w.symbols = apply_merge(&w.symbols, left, right, result);
            for p in w.symbols.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_default() += w.count;
                pair_words.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
        }
        pair_counts.remove(&best.pair);
        touched.remove(&best.pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(c) if c > 0 => heap.push(candidate(pair, c, &tokens)),
                _ => {
                    pair_counts.remove(&pair);
                }
            }
        }
    }

    vocab = Vocabulary::from_parts(tokens, merges)?;
    Ok(vocab)
}
