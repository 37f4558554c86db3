//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "TTDCKPT\0"                      8-byte magic
//! u32 version = 1
//! u32 n, n bytes                   model config as JSON
//! u32 n, n bytes                   vocabulary in its text format
//! u32 tensor count
//! per tensor, in ModelWeights::named() order:
//!     u32 n, n bytes               UTF-8 name
//!     u8 rank, rank × u32          dims
//!     product(dims) × f32          row-major data
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Serialisation is a pure function of the model, so equal models produce
//! identical files.

use std::path::Path;

use super::{ModelConfig, ModelWeights, ToxicityModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TTDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

impl Checkpoint {
    pub fn from_model(model: &ToxicityModel) -> Self {
        Self {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            tensors: model
                .weights
                .named()
                .into_iter()
                .map(|(n, t)| (n, Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap()))
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<ToxicityModel> {
        let layout = ModelWeights::layout(&self.config);
        for ((want, _), (got, _)) in layout.iter().zip(&self.tensors) {
            if want != got {
                return Err(bad(format!("expected tensor `{want}`, found `{got}`")));
            }
        }
        let weights = ModelWeights::from_ordered(&self.config, self.tensors.into_iter().map(|(_, t)| t).collect())?;
        ToxicityModel::new(self.config, weights, self.vocab)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_block(&mut out, &serde_json::to_vec(&self.config)?);
        put_block(&mut out, self.vocab.to_text().as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_block(&mut out, name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.reserve(t.numel() * 4);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config: ModelConfig = serde_json::from_slice(r.block()?)?;
        let vocab_text = std::str::from_utf8(r.block()?).map_err(|_| bad("vocabulary is not UTF-8"))?;
        let vocab = Vocabulary::from_text(vocab_text)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(r.block()?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| bad("dims overflow"))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| bad("dims overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes before checksum", body.len() - r.pos)));
        }
        Ok(Self { config, vocab, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl ToxicityModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.into_model()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Checkpoint::from_model(self).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Checkpoint::from_bytes(bytes)?.into_model()
    }
}
