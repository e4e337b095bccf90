//! Synthetic languages: noisy linear maps over GF(2), products of primes, and
//! the small multiplication table used for exact decompositions.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::f2linalg::{F2Matrix, F2Vector};

pub type TokenId = u32;

/// Largest sieve bound accepted by [`sieve_primes`].
pub const MAX_SIEVE_LIMIT: u64 = 100_000_000;

pub const BOS_TOKEN: &str = "<BOS>";

/// Ordered list of distinct token strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return invalid(format!("duplicate token {t:?}"));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Appends the BOS token if absent and returns its id.
    pub fn with_bos(&self) -> (Vocab, TokenId) {
        if let Some(id) = self.id(BOS_TOKEN) {
            return (self.clone(), id);
        }
        let mut tokens = self.tokens.clone();
        tokens.push(BOS_TOKEN.to_string());
        let id = (tokens.len() - 1) as TokenId;
        (Vocab::new(tokens).expect("BOS is new"), id)
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("?")).collect()
    }

    pub fn encode_symbols(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .map(|c| self.id(c.encode_utf8(&mut [0; 4])).ok_or(Error::UnknownSymbol(c)))
            .collect()
    }
}

/// Fixed-length sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(pub Vec<TokenId>);

impl Sentence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

/// Which bit tokens receive flip noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    #[default]
    All,
    YOnly,
}

pub const LINEAR_BIT0: TokenId = 0;
pub const LINEAR_BIT1: TokenId = 1;
pub const LINEAR_PAD: TokenId = 2;

/// Sentences `x ___ y` with `y = M x` over GF(2), then per-bit flip noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLangSpec {
    pub matrix: F2Matrix,
    pub p: f64,
    pub pad_count: usize,
    pub noise_scope: NoiseScope,
}

impl LinearLangSpec {
    pub fn new(matrix: F2Matrix, p: f64, pad_count: usize) -> Result<Self> {
        let spec = Self { matrix, p, pad_count, noise_scope: NoiseScope::All };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return invalid(format!("flip probability {} outside [0, 1)", self.p));
        }
        if !self.matrix.is_invertible() {
            return invalid("linear language matrix must be invertible");
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.matrix.n()
    }

    pub fn sentence_len(&self) -> usize {
        2 * self.m() + self.pad_count
    }

    pub fn vocab() -> Vocab {
        Vocab::new(["0", "1", "_"]).expect("static vocab")
    }

    /// Builds the sentence for a given `x`, drawing only the flip noise.
    pub fn sentence_for<R: Rng + ?Sized>(&self, x: &F2Vector, rng: &mut R) -> Result<Sentence> {
        let y = self.matrix.mul_vec(x)?;
        let m = self.m();
        let mut tokens = Vec::with_capacity(self.sentence_len());
        for (segment, noisy) in [(&x, self.noise_scope == NoiseScope::All), (&&y, true)] {
            if !tokens.is_empty() {
                tokens.extend(std::iter::repeat_n(LINEAR_PAD, self.pad_count));
            }
            for i in 0..m {
                let mut bit = segment.get(i);
                if noisy && self.p > 0.0 && rng.gen::<f64>() < self.p {
                    bit = !bit;
                }
                tokens.push(if bit { LINEAR_BIT1 } else { LINEAR_BIT0 });
            }
        }
        Ok(Sentence(tokens))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let x = F2Vector::random(self.m(), rng);
        self.sentence_for(&x, rng).expect("dimensions agree")
    }

    /// Lower bound on the entropy of one sentence in nats: uniform `x` plus
    /// the irreducible flip noise on the `y` segment.
    pub fn entropy_floor_nats(&self) -> f64 {
        let m = self.m() as f64;
        m * std::f64::consts::LN_2 + m * binary_entropy(self.p)
    }

    /// The exact measure over observed sentences. Only for small `m`.
    pub fn finite_language(&self) -> Result<FiniteLanguage> {
        let m = self.m();
        if m > 8 {
            return Err(Error::ResourceLimit(format!("exact linear language needs m <= 8, got {m}")));
        }
        let x_noise = self.noise_scope == NoiseScope::All;
        let flip = |a: usize, b: usize| {
            let d = (a ^ b).count_ones() as i32;
            self.p.powi(d) * (1.0 - self.p).powi(m as i32 - d)
        };
        let mut weights: HashMap<Vec<TokenId>, f64> = HashMap::new();
        let prior = 0.5f64.powi(m as i32);
        for x in 0..(1usize << m) {
            let xv = F2Vector::from_bits(&(0..m).map(|i| x >> i & 1 == 1).collect::<Vec<_>>());
            let yv = self.matrix.mul_vec(&xv)?;
            let y = (0..m).fold(0usize, |acc, i| acc | (yv.get(i) as usize) << i);
            for xo in 0..(1usize << m) {
                let px = if x_noise { flip(x, xo) } else if xo == x { 1.0 } else { 0.0 };
                if px == 0.0 {
                    continue;
                }
                for yo in 0..(1usize << m) {
                    let py = flip(y, yo);
                    if py == 0.0 {
                        continue;
                    }
                    let mut s = Vec::with_capacity(self.sentence_len());
                    s.extend((0..m).map(|i| (xo >> i & 1) as TokenId));
                    s.extend(std::iter::repeat_n(LINEAR_PAD, self.pad_count));
                    s.extend((0..m).map(|i| (yo >> i & 1) as TokenId));
                    *weights.entry(s).or_default() += prior * px * py;
                }
            }
        }
        let mut pairs: Vec<_> = weights.into_iter().collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let (sentences, probs): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(s, w)| (Sentence(s), w)).unzip();
        FiniteLanguage::from_weights(Self::vocab(), sentences, probs)
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

pub const PRIME_TIMES: TokenId = 10;
pub const PRIME_ARROW: TokenId = 11;

/// `p ××× q ↔↔↔↔↔↔↔ rev(pq)` with `p < q` primes below `10^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimeLangSpec {
    pub k: usize,
    primes: Vec<u64>,
    pub times_reps: usize,
    pub arrow_reps: usize,
}

impl PrimeLangSpec {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return invalid("digit budget k must be at least 1");
        }
        let limit = 10u64
            .checked_pow(k as u32)
            .filter(|&l| l <= MAX_SIEVE_LIMIT)
            .ok_or_else(|| Error::ResourceLimit(format!("10^{k} exceeds the sieve budget {MAX_SIEVE_LIMIT}")))?;
        Ok(Self { k, primes: sieve_primes(limit)?, times_reps: 3, arrow_reps: 7 })
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn sentence_len(&self) -> usize {
        4 * self.k + self.times_reps + self.arrow_reps
    }

    /// Number of ordered pairs `p < q`.
    pub fn pair_count(&self) -> u128 {
        let n = self.primes.len() as u128;
        n * n.saturating_sub(1) / 2
    }

    pub fn vocab() -> Vocab {
        Vocab::new(["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "×", "↔"]).expect("static vocab")
    }

    pub fn is_prime(&self, v: u64) -> bool {
        self.primes.binary_search(&v).is_ok()
    }

    /// Uniform over `{(p, q) : p < q}`; independent draws across calls.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(u64, u64)> {
        if self.primes.len() < 2 {
            return invalid("fewer than two primes available");
        }
        let idx = index::sample(rng, self.primes.len(), 2);
        let (a, b) = (idx.index(0), idx.index(1));
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        Ok((self.primes[i], self.primes[j]))
    }

    pub fn format(&self, p: u64, q: u64) -> Result<Sentence> {
        if !(p < q) {
            return invalid(format!("expected p < q, got {p} and {q}"));
        }
        if !self.is_prime(p) || !self.is_prime(q) {
            return invalid(format!("{p} and {q} must both be primes below 10^{}", self.k));
        }
        let digit_ids = |s: &str| s.bytes().map(|b| (b - b'0') as TokenId).collect::<Vec<_>>();
        let mut tokens = Vec::with_capacity(self.sentence_len());
        tokens.extend(digit_ids(&format!("{p:0width$}", width = self.k)));
        tokens.extend(std::iter::repeat_n(PRIME_TIMES, self.times_reps));
        tokens.extend(digit_ids(&format!("{q:0width$}", width = self.k)));
        tokens.extend(std::iter::repeat_n(PRIME_ARROW, self.arrow_reps));
        tokens.extend(digit_ids(&rev_digits(p * q, 2 * self.k)?));
        Ok(Sentence(tokens))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sentence> {
        let (p, q) = self.sample_pair(rng)?;
        self.format(p, q)
    }

    /// Inverse of [`PrimeLangSpec::format`]: returns `(p, q, p*q)` with the
    /// product read back from its reversed digits.
    pub fn decode(&self, s: &Sentence) -> Result<(u64, u64, u64)> {
        let k = self.k;
        if s.len() != self.sentence_len() {
            return invalid("wrong sentence length");
        }
        let num = |ids: &[TokenId]| -> Result<u64> {
            ids.iter().try_fold(0u64, |acc, &d| {
                if d > 9 {
                    return invalid("expected a digit token");
                }
                Ok(acc * 10 + d as u64)
            })
        };
        let t = s.tokens();
        let p = num(&t[..k])?;
        let q = num(&t[k + self.times_reps..2 * k + self.times_reps])?;
        let rev: Vec<TokenId> = t[2 * k + self.times_reps + self.arrow_reps..].iter().rev().copied().collect();
        Ok((p, q, num(&rev)?))
    }

    /// Token-position ranges of the `p`, `q`, and `rev(pq)` fields.
    pub fn field_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let k = self.k;
        let q0 = k + self.times_reps;
        let r0 = 2 * k + self.times_reps + self.arrow_reps;
        [0..k, q0..q0 + k, r0..r0 + 2 * k]
    }
}

/// Zero-pads `value` to `width` digits, then reverses the digit order.
pub fn rev_digits(value: u64, width: usize) -> Result<String> {
    let s = format!("{value:0width$}");
    if s.len() > width {
        return invalid(format!("{value} does not fit in {width} digits"));
    }
    Ok(s.chars().rev().collect())
}

/// Primes strictly below `limit`.
pub fn sieve_primes(limit: u64) -> Result<Vec<u64>> {
    if limit < 2 {
        return invalid(format!("sieve limit {limit} must be at least 2"));
    }
    if limit > MAX_SIEVE_LIMIT {
        return Err(Error::ResourceLimit(format!("sieve limit {limit} exceeds {MAX_SIEVE_LIMIT}")));
    }
    let n = limit as usize;
    let mut composite = vec![false; n];
    let mut primes = Vec::new();
    for i in 2..n {
        if composite[i] {
            continue;
        }
        primes.push(i as u64);
        let mut j = i.saturating_mul(i);
        while j < n {
            composite[j] = true;
            j += i;
        }
    }
    Ok(primes)
}

pub const MULT_TIMES: TokenId = 10;
pub const MULT_EQUALS: TokenId = 11;

/// The 81 sentences `A×B=CD` for `1 <= A, B <= 9`, each with probability 1/81.
pub fn mult_toy_language() -> FiniteLanguage {
    let vocab = Vocab::new(["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "×", "="]).expect("static vocab");
    let mut sentences = Vec::with_capacity(81);
    for a in 1..=9u32 {
        for b in 1..=9u32 {
            let prod = a * b;
            sentences.push(Sentence(vec![a, MULT_TIMES, b, MULT_EQUALS, prod / 10, prod % 10]));
        }
    }
    FiniteLanguage::uniform(vocab, sentences).expect("distinct sentences")
}

/// Explicit finite probability measure over equal-length sentences.
#[derive(Debug, Clone)]
pub struct FiniteLanguage {
    vocab: Vocab,
    sentences: Vec<Sentence>,
    probs: Vec<f64>,
}

impl FiniteLanguage {
    pub fn new(vocab: Vocab, sentences: Vec<Sentence>, probs: Vec<f64>) -> Result<Self> {
        if sentences.is_empty() {
            return invalid("a finite language needs at least one sentence");
        }
        if sentences.len() != probs.len() {
            return invalid("sentence and probability counts differ");
        }
        let n = sentences[0].len();
        let mut seen = HashSet::with_capacity(sentences.len());
        for s in &sentences {
            if s.len() != n {
                return invalid("sentences must share one length");
            }
            if s.tokens().iter().any(|&t| t as usize >= vocab.len()) {
                return invalid("token id outside the vocabulary");
            }
            if !seen.insert(s) {
                return invalid(format!("duplicate sentence {:?}", vocab.render(s.tokens())));
            }
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return invalid("probabilities must be strictly positive");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        Ok(Self { vocab, sentences, probs })
    }

    /// Normalizes positive weights into probabilities.
    pub fn from_weights(vocab: Vocab, sentences: Vec<Sentence>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return invalid("weights must have a positive sum");
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Self::new(vocab, sentences, probs)
    }

    pub fn uniform(vocab: Vocab, sentences: Vec<Sentence>) -> Result<Self> {
        let p = 1.0 / sentences.len().max(1) as f64;
        let probs = vec![p; sentences.len()];
        Self::new(vocab, sentences, probs)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence_len(&self) -> usize {
        self.sentences[0].len()
    }

    pub fn prob_of(&self, s: &Sentence) -> Option<f64> {
        self.sentences.iter().position(|t| t == s).map(|i| self.probs[i])
    }

    /// Draws one sentence by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (s, &p) in self.sentences.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return s.clone();
            }
        }
        self.sentences.last().expect("nonempty").clone()
    }
}

/// A sampleable synthetic language.
#[derive(Debug, Clone)]
pub enum Language {
    Linear(LinearLangSpec),
    Primes(PrimeLangSpec),
    Finite(FiniteLanguage),
}

impl Language {
    pub fn vocab(&self) -> Vocab {
        match self {
            Language::Linear(_) => LinearLangSpec::vocab(),
            Language::Primes(_) => PrimeLangSpec::vocab(),
            Language::Finite(f) => f.vocab().clone(),
        }
    }

    pub fn sentence_len(&self) -> usize {
        match self {
            Language::Linear(s) => s.sentence_len(),
            Language::Primes(s) => s.sentence_len(),
            Language::Finite(f) => f.sentence_len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        match self {
            Language::Linear(s) => s.sample(rng),
            Language::Primes(s) => s.sample(rng).expect("spec holds at least two primes"),
            Language::Finite(f) => f.sample(rng),
        }
    }

    /// Entropy of one sentence in nats, or a lower bound when only that is
    /// available cheaply.
    pub fn entropy_floor_nats(&self) -> f64 {
        match self {
            Language::Linear(s) => s.entropy_floor_nats(),
            Language::Primes(s) => (s.pair_count() as f64).ln(),
            Language::Finite(f) => f.probs().iter().map(|p| -p * p.ln()).sum(),
        }
    }
}
