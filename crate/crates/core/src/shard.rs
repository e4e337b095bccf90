//! Binary token shards and their vocabulary sidecar.
//!
//! Layout (little-endian): 8-byte magic `AOTSHRD1`, `u32` vocabulary size,
//! `u32` sentence length, `u64` sentence count, then `count * length` token
//! ids as `u16`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::bpe::{escape, unescape};
use crate::datapipe::Fnv64;
use crate::error::{invalid, Error, Result};
use crate::langgen::{TokenId, Vocab};

pub const SHARD_MAGIC: &[u8; 8] = b"AOTSHRD1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenShard {
    pub vocab_size: u32,
    pub sentence_len: u32,
    pub tokens: Vec<TokenId>,
}

impl TokenShard {
    pub fn new(vocab_size: usize, sentences: &[Vec<TokenId>]) -> Result<Self> {
        if vocab_size > u16::MAX as usize + 1 {
            return invalid(format!("vocabulary of {vocab_size} tokens does not fit 16-bit ids"));
        }
        let n = sentences.first().map_or(0, Vec::len);
        let mut tokens = Vec::with_capacity(n * sentences.len());
        for s in sentences {
            if s.len() != n {
                return invalid("all sentences in a shard must share one length");
            }
            if let Some(&t) = s.iter().find(|&&t| t as usize >= vocab_size) {
                return invalid(format!("token id {t} outside vocabulary of size {vocab_size}"));
            }
            tokens.extend_from_slice(s);
        }
        Ok(Self { vocab_size: vocab_size as u32, sentence_len: n as u32, tokens })
    }

    pub fn count(&self) -> usize {
        if self.sentence_len == 0 {
            0
        } else {
            self.tokens.len() / self.sentence_len as usize
        }
    }

    pub fn sentences(&self) -> Vec<Vec<TokenId>> {
        if self.sentence_len == 0 {
            return Vec::new();
        }
        self.tokens.chunks(self.sentence_len as usize).map(<[TokenId]>::to_vec).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 2 * self.tokens.len());
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        out.extend_from_slice(&self.sentence_len.to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for &t in &self.tokens {
            out.extend_from_slice(&(t as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..8] != SHARD_MAGIC {
            return Err(Error::Format("not a token shard".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let vocab_size = u32_at(8);
        let sentence_len = u32_at(12);
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let body = &bytes[24..];
        if body.len() != 2 * count * sentence_len as usize {
            return Err(Error::Format(format!(
                "shard body has {} bytes, header implies {}",
                body.len(),
                2 * count * sentence_len as usize
            )));
        }
        let tokens: Vec<TokenId> = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as TokenId)
            .collect();
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Format(format!("token id {t} outside vocabulary of size {vocab_size}")));
        }
        Ok(Self { vocab_size, sentence_len, tokens })
    }

    /// FNV-1a over the serialized bytes.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write(&self.to_bytes());
        h.0
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Sidecar path for a shard: `<shard>.vocab`.
pub fn vocab_path(shard: &Path) -> PathBuf {
    let mut p = shard.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

/// One escaped token per line.
pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let text: String = vocab.tokens().iter().map(|t| escape(t) + "\n").collect();
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path)?;
    let tokens = text.lines().map(unescape).collect::<Result<Vec<_>>>()?;
    Vocab::new(tokens)
}
