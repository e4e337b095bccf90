//! Corpus preparation shared by forward and backward runs: stride splitting,
//! BOS placement, seeded shuffling and batching.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::langgen::TokenId;

/// Identifier of the permutation used by [`shuffle_split`]. Part of the
/// on-disk contract: changing the algorithm must change this string.
pub const SHUFFLE_ALGORITHM: &str = "fisher-yates/chacha8/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "FW")]
    Forward,
    #[serde(rename = "BW")]
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "FW",
            Direction::Backward => "BW",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FW" | "FORWARD" => Ok(Direction::Forward),
            "BW" | "BACKWARD" => Ok(Direction::Backward),
            _ => invalid(format!("unknown direction {s:?}")),
        }
    }
}

/// Model context length `n` (BOS included) and the step between windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub n: usize,
    pub stride: usize,
}

impl SplitConfig {
    /// Uses `stride = floor(n / 2)`.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_stride(n, n / 2)
    }

    pub fn with_stride(n: usize, stride: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("context length {n} must be at least 2"));
        }
        if stride == 0 || stride > n - 1 {
            return invalid(format!("stride {stride} must lie in [1, {}]", n - 1));
        }
        Ok(Self { n, stride })
    }

    /// Tokens per sentence before BOS is added.
    pub fn window(&self) -> usize {
        self.n - 1
    }
}

/// Windows of `n - 1` tokens at offsets `0, stride, 2*stride, ...`. A trailing
/// partial window is dropped; input shorter than one window yields nothing.
pub fn split_with_stride(tokens: &[TokenId], cfg: SplitConfig) -> Vec<Vec<TokenId>> {
    let w = cfg.window();
    if tokens.len() < w {
        return Vec::new();
    }
    (0..=tokens.len() - w)
        .step_by(cfg.stride)
        .map(|start| tokens[start..start + w].to_vec())
        .collect()
}

/// FW: `[BOS] ++ s`. BW: `reverse(s ++ [BOS])`, which also starts with BOS.
pub fn prepare_direction(sentence: &[TokenId], direction: Direction, bos: TokenId) -> Vec<TokenId> {
    debug_assert!(!sentence.contains(&bos), "BOS inside the payload");
    let mut out = Vec::with_capacity(sentence.len() + 1);
    out.push(bos);
    match direction {
        Direction::Forward => out.extend_from_slice(sentence),
        Direction::Backward => out.extend(sentence.iter().rev()),
    }
    out
}

/// Inverse of [`prepare_direction`]: recovers the natural-order payload.
pub fn recover_payload(input: &[TokenId], direction: Direction) -> Vec<TokenId> {
    let payload = &input[1..];
    match direction {
        Direction::Forward => payload.to_vec(),
        Direction::Backward => payload.iter().rev().copied().collect(),
    }
}

/// Sentences in a fixed order, with their indices in the pre-shuffle corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSet {
    pub sentences: Vec<Vec<TokenId>>,
    pub source_indices: Vec<usize>,
    pub seed: u64,
}

impl SentenceSet {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence_len(&self) -> Option<usize> {
        self.sentences.first().map(Vec::len)
    }
}

/// Seeded Fisher–Yates permutation of `0..len`.
pub fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Shuffles under `seed` and withholds the first `n_validation` sentences.
pub fn shuffle_split(
    sentences: &[Vec<TokenId>],
    seed: u64,
    n_validation: usize,
) -> Result<(SentenceSet, SentenceSet)> {
    if n_validation >= sentences.len() {
        return invalid(format!(
            "cannot withhold {n_validation} of {} sentences for validation",
            sentences.len()
        ));
    }
    let perm = permutation(sentences.len(), seed);
    let take = |idx: &[usize]| SentenceSet {
        sentences: idx.iter().map(|&i| sentences[i].clone()).collect(),
        source_indices: idx.to_vec(),
        seed,
    };
    let (val, train) = perm.split_at(n_validation);
    Ok((take(train), take(val)))
}

/// One direction-prepared batch, `rows x n` token ids stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<TokenId>,
    pub rows: usize,
    pub n: usize,
    /// Positions in the sentence set of the rows, in order.
    pub members: Vec<usize>,
    /// Hash of the natural-order payloads, equal for FW and BW batches.
    pub payload_checksum: u64,
}

impl Batch {
    pub fn row(&self, r: usize) -> &[TokenId] {
        &self.tokens[r * self.n..(r + 1) * self.n]
    }
}

/// Sequential batches over a set in its stored order.
pub struct BatchIter<'a> {
    set: &'a SentenceSet,
    batch_size: usize,
    direction: Direction,
    bos: TokenId,
    next: usize,
}

pub fn batch_iter(set: &SentenceSet, batch_size: usize, direction: Direction, bos: TokenId) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch size must be positive");
    BatchIter { set, batch_size, direction, bos, next: 0 }
}

/// Builds a batch from explicit member indices of `set`.
pub fn make_batch(set: &SentenceSet, members: &[usize], direction: Direction, bos: TokenId) -> Batch {
    let n = set.sentence_len().unwrap_or(0) + 1;
    let mut tokens = Vec::with_capacity(members.len() * n);
    let mut h = Fnv64::default();
    for &i in members {
        let s = &set.sentences[i];
        h.write_u32s(s);
        tokens.extend(prepare_direction(s, direction, bos));
    }
    Batch { tokens, rows: members.len(), n, members: members.to_vec(), payload_checksum: h.0 }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.set.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.set.len());
        let members: Vec<usize> = (self.next..end).collect();
        self.next = end;
        Some(make_batch(self.set, &members, self.direction, self.bos))
    }
}

/// FNV-1a, used for stream checksums.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(pub u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u32s(&mut self, xs: &[u32]) {
        for x in xs {
            self.write(&x.to_le_bytes());
        }
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }
}

/// Reverses a string by unicode scalar values.
pub fn reverse_chars(text: &str) -> String {
    text.chars().rev().collect()
}
