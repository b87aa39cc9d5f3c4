//! Text ↔ token ids with atomic special tokens.
//!
//! Two segmentation modes: byte-level (lossless, no unknowns, vocab of
//! exactly 256 units) and whitespace-word (compact sequences for toy
//! corpora). Special tokens are matched greedily before segmentation so the
//! proposition grammar's delimiters survive as single ids in both modes.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

/// Fixed id order; `[pad]` deliberately sits at id 0.
pub const SPECIAL_TOKENS: [&str; 6] = ["[pad]", "[unk]", "[eos]", "[tsk]", "[sep]", "[cls]"];

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOS: u32 = 2;
pub const TSK: u32 = 3;
pub const SEP: u32 = 4;
pub const CLS: u32 = 5;

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    Byte,
    Word,
}

/// Immutable token table. Ids 0..6 are the special tokens, the rest are
/// single bytes (byte mode) or whole words (word mode).
#[derive(Clone, Debug)]
pub struct Vocab {
    mode: VocabMode,
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
}

impl Vocab {
    /// Builds a vocab from a corpus. Word mode keeps the `max_size - 6` most
    /// frequent words (ties broken by byte order); byte mode always holds all
    /// 256 byte units and needs `max_size >= 262`.
    pub fn build(corpus: &str, mode: VocabMode, max_size: usize) -> Result<Vocab> {
        if corpus.trim().is_empty() {
            return Err(Error::Config("vocab corpus is empty".into()));
        }
        if max_size < SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocab max_size {max_size} cannot hold the {} special tokens",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut tokens: Vec<Vec<u8>> =
            SPECIAL_TOKENS.iter().map(|s| s.as_bytes().to_vec()).collect();
        match mode {
            VocabMode::Byte => {
                if max_size < SPECIAL_TOKENS.len() + 256 {
                    return Err(Error::Config(format!(
                        "byte mode needs max_size >= {}, got {max_size}",
                        SPECIAL_TOKENS.len() + 256
                    )));
                }
                tokens.extend((0u8..=255).map(|b| vec![b]));
            }
            VocabMode::Word => {
                let mut counts: HashMap<&str, u64> = HashMap::new();
                for segment in plain_segments(corpus) {
                    for word in segment.split_whitespace() {
                        *counts.entry(word).or_insert(0) += 1;
                    }
                }
                let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                ranked.truncate(max_size - SPECIAL_TOKENS.len());
                tokens.extend(ranked.into_iter().map(|(w, _)| w.as_bytes().to_vec()));
            }
        }
        Ok(Vocab::from_tokens(mode, tokens))
    }

    fn from_tokens(mode: VocabMode, tokens: Vec<Vec<u8>>) -> Vocab {
        let token_to_id =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { mode, tokens, token_to_id }
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        self.tokens
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("token id {id} outside vocab of {}", self.size())))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let bytes = text.as_bytes();
        let mut ids = Vec::new();
        let mut plain_start = 0;
        let mut i = 0;
        while i < bytes.len() {
            if let Some(special) = match_special(bytes, i) {
                self.encode_plain(&text[plain_start..i], &mut ids);
                ids.push(special);
                i += SPECIAL_TOKENS[special as usize].len();
                plain_start = i;
            } else {
                i += 1;
            }
        }
        self.encode_plain(&text[plain_start..], &mut ids);
        ids
    }

    fn encode_plain(&self, chunk: &str, out: &mut Vec<u32>) {
        match self.mode {
            VocabMode::Byte => {
                out.extend(chunk.bytes().map(|b| SPECIAL_TOKENS.len() as u32 + b as u32));
            }
            VocabMode::Word => {
                for word in chunk.split_whitespace() {
                    out.push(*self.token_to_id.get(word.as_bytes()).unwrap_or(&UNK));
                }
            }
        }
    }

    /// Byte mode concatenates token bytes verbatim, so `decode(encode(t))`
    /// is the identity. Word mode rejoins tokens with single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        match self.mode {
            VocabMode::Byte => {
                let mut bytes = Vec::new();
                for &id in ids {
                    bytes.extend_from_slice(self.token_bytes(id)?);
                }
                Ok(String::from_utf8_lossy(&bytes).into_owned())
            }
            VocabMode::Word => {
                let mut parts = Vec::with_capacity(ids.len());
                for &id in ids {
                    parts.push(String::from_utf8_lossy(self.token_bytes(id)?).into_owned());
                }
                Ok(parts.join(" "))
            }
        }
    }

    /// The persisted form: one escaped token per line, line number = id.
    pub fn file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for token in &self.tokens {
            out.extend_from_slice(escape(token).as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.file_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.file_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            tokens.push(unescape(line).map_err(|e| {
                Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?);
        }
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Format(format!(
                "vocab file {} holds {} tokens, fewer than the {} specials",
                path.display(),
                tokens.len(),
                SPECIAL_TOKENS.len()
            )));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != special.as_bytes() {
                return Err(Error::Format(format!(
                    "vocab file {} line {} should be {special}",
                    path.display(),
                    i + 1
                )));
            }
        }
        // The mode is recoverable from the table itself: byte vocabs are
        // exactly the specials plus the 256 byte units in order.
        let n = SPECIAL_TOKENS.len();
        let is_byte = tokens.len() == n + 256
            && tokens[n..].iter().enumerate().all(|(b, t)| t.as_slice() == [b as u8]);
        let mode = if is_byte { VocabMode::Byte } else { VocabMode::Word };
        Ok(Vocab::from_tokens(mode, tokens))
    }
}

/// Pieces of `text` lying between special-token occurrences.
fn plain_segments(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut segments = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if let Some(special) = match_special(bytes, i) {
            segments.push(&text[plain_start..i]);
            i += SPECIAL_TOKENS[special as usize].len();
            plain_start = i;
        } else {
            i += 1;
        }
    }
    segments.push(&text[plain_start..]);
    segments
}

fn match_special(bytes: &[u8], at: usize) -> Option<u32> {
    SPECIAL_TOKENS
        .iter()
        .position(|tok| bytes[at..].starts_with(tok.as_bytes()))
        .map(|i| i as u32)
}

fn escape(token: &[u8]) -> String {
    let mut out = String::new();
    for &b in token {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape(line: &str) -> Result<Vec<u8>> {
    let bytes = line.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        let code = *bytes
            .get(i + 1)
            .ok_or_else(|| Error::Format("dangling escape at end of line".into()))?;
        match code {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b'n' => {
                out.push(b'\n');
                i += 2;
            }
            b'r' => {
                out.push(b'\r');
                i += 2;
            }
            b'x' => {
                let hex = line
                    .get(i + 2..i + 4)
                    .ok_or_else(|| Error::Format("truncated \\x escape".into()))?;
                let b = u8::from_str_radix(hex, 16)
                    .map_err(|_| Error::Format(format!("bad hex escape \\x{hex}")))?;
                out.push(b);
                i += 4;
            }
            other => {
                return Err(Error::Format(format!("unknown escape \\{}", other as char)));
            }
        }
    }
    Ok(out)
}
