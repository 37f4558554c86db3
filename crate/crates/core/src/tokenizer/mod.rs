//! Byte-level BPE tokenizer.
//!
//! Text is lowercased and NFC-normalised, split into chunks of the form
//! `whitespace* non-whitespace*`, and each chunk is segmented with the learned
//! merges. Every byte has a base token, so any input is representable and
//! decoding is lossless on normalised text.

mod bpe;
mod io;

use std::collections::HashMap;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use bpe::train_vocab;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Two specials followed by the 256 single-byte tokens.
pub const BASE_VOCAB_SIZE: usize = 258;
pub const DEFAULT_VOCAB_SIZE: usize = 30_522;
/// Longest sequence the model is validated for.
pub const MAX_SEQ_LEN: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Unk,
    Bytes(Vec<u8>),
}

impl Token {
    pub fn bytes(&self) -> &[u8] {
        match self {
            Token::Bytes(b) => b,
            Token::Pad | Token::Unk => &[],
        }
    }
}

/// One learned merge: `left` followed by `right` becomes `result`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub result: u32,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    token_to_id: HashMap<Token, u32>,
    merges: Vec<Merge>,
    /// `(left, right) → (rank, result)`.
    merge_ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

impl Vocabulary {
    /// Specials plus the 256 byte tokens, no merges.
    pub fn byte_level() -> Self {
        let mut tokens = vec![Token::Pad, Token::Unk];
        tokens.extend((0..=255u8).map(|b| Token::Bytes(vec![b])));
        Self::from_parts(tokens, Vec::new()).expect("base vocabulary is well formed")
    }

    pub(crate) fn from_parts(tokens: Vec<Token>, merges: Vec<Merge>) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "vocabulary",
            reason,
        };
        if tokens.len() < BASE_VOCAB_SIZE || tokens[0] != Token::Pad || tokens[1] != Token::Unk {
            return Err(bad("PAD and UNK must be ids 0 and 1 followed by 256 byte tokens".into()));
        }
        for b in 0..=255u8 {
            if tokens[2 + b as usize] != Token::Bytes(vec![b]) {
                return Err(bad(format!("byte token {b:#04x} is not at id {}", 2 + b as usize)));
            }
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if matches!(tok, Token::Bytes(b) if b.is_empty()) {
                return Err(bad(format!("token {id} is empty")));
            }
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(bad(format!("duplicate token at id {id}")));
            }
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            let n = tokens.len() as u32;
            if m.left < 2 || m.right < 2 || m.left >= n || m.right >= n || m.result >= n {
                return Err(bad(format!("merge {rank} references an invalid id")));
            }
            let mut joined = tokens[m.left as usize].bytes().to_vec();
            joined.extend_from_slice(tokens[m.right as usize].bytes());
            if tokens[m.result as usize].bytes() != joined.as_slice() {
                return Err(bad(format!("merge {rank} result does not concatenate its parts")));
            }
            merge_ranks.entry((m.left, m.right)).or_insert((rank as u32, m.result));
        }
        Ok(Self {
            tokens,
            token_to_id,
            merges,
            merge_ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn id_of(&self, token: &Token) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Segments normalised text; no truncation.
    pub fn encode_all(&self, text: &str) -> Vec<u32> {
        let normalized = normalize(text);
        let mut ids = Vec::new();
        for chunk in split_chunks(&normalized) {
            self.segment_chunk(chunk.as_bytes(), &mut ids);
        }
        ids
    }

    fn segment_chunk(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = bytes.iter().map(|&b| b as u32 + 2).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0], w[1])).map(|&(rank, res)| (rank, w[0], w[1], res)))
                .min();
            let Some((_, left, right, result)) = best else { break };
            symbols = apply_merge(&symbols, left, right, result);
        }
        out.extend(symbols);
    }

    /// Normalises, segments and truncates to `max_len` (keeping the head).
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len == 0 || max_len > MAX_SEQ_LEN {
            return Err(Error::Contract(format!("max_len must lie in [1, {MAX_SEQ_LEN}], got {max_len}")));
        }
        let mut ids = self.encode_all(text);
        let original_length = ids.len();
        ids.truncate(max_len);
        let attention_mask = vec![1; ids.len()];
        Ok(TokenSequence {
            ids,
            attention_mask,
            original_length,
        })
    }

    /// Concatenates token bytes; specials contribute nothing.
    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter_map(|&id| self.tokens.get(id as usize))
            .flat_map(|t| t.bytes().iter().copied())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

pub(crate) fn apply_merge(symbols: &[u32], left: u32, right: u32, result: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(result);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Lowercase, then Unicode NFC.
pub fn normalize(text: &str) -> String {
    text.to_lowercase().nfc().collect()
}

/// Splits into `whitespace* non-whitespace*` chunks; concatenation is the input.
pub(crate) fn split_chunks(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws {
            chunks.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

/// Encoded text before batching.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Token count before truncation.
    pub original_length: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Right-padded batch: `ids` and `mask` are `[batch, len]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<u32>,
    pub mask: Vec<f32>,
    pub batch: usize,
    pub len: usize,
}

impl PaddedBatch {
    pub fn ids_tensor(&self) -> Tensor {
        Tensor::new(vec![self.batch, self.len], self.ids.iter().map(|&i| i as f32).collect())
            .expect("batch dims are positive")
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(vec![self.batch, self.len], self.mask.clone()).expect("batch dims are positive")
    }

    pub fn row_ids(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }
}

/// Pads every sequence with PAD to the longest one in the batch.
pub fn pad_batch(sequences: &[TokenSequence]) -> Result<PaddedBatch> {
    if sequences.is_empty() {
        return Err(Error::Contract("pad_batch needs at least one sequence".into()));
    }
    if let Some(i) = sequences.iter().position(|s| s.is_empty()) {
        return Err(Error::Validation(format!("sequence {i} has no content tokens")));
    }
    let len = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
    if len > MAX_SEQ_LEN {
        return Err(Error::Contract(format!("sequence of {len} tokens exceeds {MAX_SEQ_LEN}")));
    }
    let mut ids = Vec::with_capacity(sequences.len() * len);
    let mut mask = Vec::with_capacity(sequences.len() * len);
    for s in sequences {
        ids.extend_from_slice(&s.ids);
        ids.resize(ids.len() + len - s.len(), PAD_ID);
        mask.extend(s.attention_mask.iter().map(|&m| f32::from(m)));
        mask.resize(mask.len() + len - s.len(), 0.0);
    }
    Ok(PaddedBatch {
        ids,
        mask,
        batch: sequences.len(),
        len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_reassemble() {
        let text = "  hello there,\tfriend \n";
        let chunks = split_chunks(text);
        assert_eq!(chunks, vec!["  hello", " there,", "\tfriend", " \n"]);
        assert_eq!(chunks.concat(), text);
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let v = Vocabulary::byte_level();
        let s = v.encode("", 512).unwrap();
        assert!(s.ids.is_empty() && s.attention_mask.is_empty());
        assert_eq!(s.original_length, 0);
    }

    #[test]
    fn encode_rejects_bad_max_len() {
        let v = Vocabulary::byte_level();
        assert!(v.encode("x", 0).is_err());
        assert!(v.encode("x", 513).is_err());
    }

    #[test]
    fn truncation_keeps_head() {
        let v = Vocabulary::byte_level();
        let text = "ab".repeat(1000);
        let s = v.encode(&text, 512).unwrap();
        assert_eq!(s.len(), 512);
        assert_eq!(s.original_length, 2000);
        assert_eq!(s.attention_mask.iter().map(|&m| m as usize).sum::<usize>(), 512);
        assert_eq!(v.decode(&s.ids), "ab".repeat(256));
    }

    #[test]
    fn normalization_lowercases_and_composes() {
        assert_eq!(normalize("I HATE You"), "i hate you");
        assert_eq!(normalize("Cafe\u{0301}"), "caf\u{e9}");
    }

    #[test]
    fn pad_batch_contract() {
        let v = Vocabulary::byte_level();
        assert!(pad_batch(&[]).is_err());
        let a = v.encode("abc", 16).unwrap();
        let b = v.encode("a", 16).unwrap();
        let batch = pad_batch(&[a, b]).unwrap();
        assert_eq!(batch.len, 3);
        assert_eq!(batch.row_ids(1), &[b'a' as u32 + 2, PAD_ID, PAD_ID]);
        assert_eq!(batch.mask, vec![1., 1., 1., 1., 0., 0.]);
        let empty = v.encode("", 16).unwrap();
        assert!(pad_batch(&[empty]).is_err());
    }
}
