//! Text serialisation of a [`Vocabulary`].
//!
//! ```text
//! TTDVOCAB 1
//! <token count>
//! <one escaped token per line, in id order>
//! #MERGES
//! <escaped left> <escaped right>
//! ```
//!
//! Bytes `0x21..=0x7e` other than `\` are written verbatim; every other byte
//! becomes `\xHH` (lowercase hex). Specials are `\!pad` and `\!unk`.

use std::fmt::Write as _;
use std::path::Path;

use super::{Merge, Token, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &str = "TTDVOCAB 1";
const MERGES: &str = "#MERGES";

fn escape(bytes: &[u8], out: &mut String) {
    for &b in bytes {
        if (0x21..=0x7e).contains(&b) && b != b'\\' {
            out.push(b as char);
        } else {
            write!(out, "\\x{b:02x}").unwrap();
        }
    }
}

fn escape_token(tok: &Token, out: &mut String) {
    match tok {
        Token::Pad => out.push_str("\\!pad"),
        Token::Unk => out.push_str("\\!unk"),
        Token::Bytes(b) => escape(b, out),
    }
}

fn unescape(s: &str) -> Result<Token> {
    match s {
        "\\!pad" => return Ok(Token::Pad),
        "\\!unk" => return Ok(Token::Unk),
        _ => {}
    }
    let bad = || Error::Format {
        what: "vocabulary",
        reason: format!("bad token escape `{s}`"),
    };
    let raw = s.as_bytes();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        match raw[i] {
            b'\\' => {
                if raw.get(i + 1) != Some(&b'x') || i + 4 > raw.len() {
                    return Err(bad());
                }
                let hex = std::str::from_utf8(&raw[i + 2..i + 4]).map_err(|_| bad())?;
                if hex.bytes().any(|c| c.is_ascii_uppercase()) {
                    return Err(bad());
                }
                out.push(u8::from_str_radix(hex, 16).map_err(|_| bad())?);
                i += 4;
            }
            b @ 0x21..=0x7e => {
                out.push(b);
                i += 1;
            }
            _ => return Err(bad()),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(Token::Bytes(out))
}

impl Vocabulary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        writeln!(out, "{}", self.tokens.len()).unwrap();
        for tok in &self.tokens {
            escape_token(tok, &mut out);
            out.push('\n');
        }
        out.push_str(MERGES);
        out.push('\n');
        for m in &self.merges {
            escape_token(&self.tokens[m.left as usize], &mut out);
            out.push(' ');
            escape_token(&self.tokens[m.right as usize], &mut out);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "vocabulary",
            reason,
        };
        let mut lines = text.split('\n');
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("missing `{MAGIC}` header")));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| bad("missing token count".into()))?;
        let mut tokens = Vec::with_capacity(count);
        for i in 0..count {
            let line = lines.next().ok_or_else(|| bad(format!("file ends at token {i} of {count}")))?;
            tokens.push(unescape(line)?);
        }
        if lines.next() != Some(MERGES) {
            return Err(bad(format!("expected `{MERGES}` after {count} tokens")));
        }
        let lookup: std::collections::HashMap<&Token, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t, i as u32)).collect();
        let mut merges = Vec::new();
        let rest: Vec<&str> = lines.collect();
        // The file ends with a newline, so the final split piece is empty.
        let body = match rest.split_last() {
            Some((&"", body)) => body,
            _ => return Err(bad("vocabulary must end with a newline".into())),
        };
        for (n, line) in body.iter().enumerate() {
            let (l, r) = line.split_once(' ').ok_or_else(|| bad(format!("merge line {n} lacks a space")))?;
            let (lt, rt) = (unescape(l)?, unescape(r)?);
            let mut joined = lt.bytes().to_vec();
            joined.extend_from_slice(rt.bytes());
            let id = |t: &Token| lookup.get(t).copied().ok_or_else(|| bad(format!("merge line {n} uses an unknown token")));
            merges.push(Merge {
                left: id(&lt)?,
                right: id(&rt)?,
                result: id(&Token::Bytes(joined))?,
            });
        }
        let vocab = Vocabulary::from_parts(tokens, merges)?;
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_vocab;

    #[test]
    fn escaping_covers_awkward_bytes() {
        let mut s = String::new();
        escape(b"a b\\\n\xff#", &mut s);
        assert_eq!(s, "a\\x20b\\x5c\\x0a\\xff#");
        assert_eq!(unescape(&s).unwrap(), Token::Bytes(b"a b\\\n\xff#".to_vec()));
        assert!(unescape("\\xFF").is_err());
        assert!(unescape("\\q").is_err());
    }

    #[test]
    fn header_layout() {
        let v = train_vocab(["aaaa aaaa"], 260).unwrap();
        let text = v.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "TTDVOCAB 1");
        assert_eq!(lines[1], "260");
        assert_eq!(lines[2], "\\!pad");
        assert_eq!(lines[3], "\\!unk");
        assert_eq!(lines[2 + 2 + 0x20], "\\x20");
        assert_eq!(lines[262], "#MERGES");
        assert_eq!(lines[263], "a a");
        assert_eq!(lines[264], "aa aa");
    }

    #[test]
    fn corrupt_files_rejected() {
        let v = Vocabulary::byte_level();
        let text = v.to_text();
        assert!(Vocabulary::from_text(&text.replacen("TTDVOCAB 1", "TTDVOCAB 2", 1)).is_err());
        assert!(Vocabulary::from_text(&text.replacen("258", "259", 1)).is_err());
        assert!(Vocabulary::from_text(text.trim_end()).is_err());
        assert!(Vocabulary::from_text(&format!("{text}a zz\n")).is_err());
    }
}
