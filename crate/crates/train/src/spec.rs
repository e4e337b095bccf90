//! Versioned JSON experiment specifications.

use aot_core::datapipe::{shuffle_split, Fnv64, SentenceSet};
use aot_core::f2linalg::{gen_sparse_invertible, F2Matrix};
use aot_core::langgen::{mult_toy_language, Language, LinearLangSpec, NoiseScope, PrimeLangSpec};
use aot_core::{Direction, TokenId, Vocab};
use aot_nn::model::{NAMED_SIZES, DEFAULT_DROPOUT};
use aot_nn::TransformerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::optim::AdamWConfig;
use crate::schedule::LrSchedule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub language: LanguageConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "both_directions")]
    pub directions: Vec<Direction>,
}

fn both_directions() -> Vec<Direction> {
    Direction::BOTH.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LanguageConfig {
    /// `x ___ y` with `y = M x`; `M` has `m + nnz_offset` ones.
    Linear {
        m: usize,
        nnz_offset: usize,
        matrix_seed: u64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        noise_scope: NoiseScope,
        #[serde(default = "default_pad")]
        pad_count: usize,
    },
    Primes {
        k: usize,
    },
    MultToy,
}

fn default_pad() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of the named sizes; otherwise give all three dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_embed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub train_sentences: usize,
    pub val_sentences: usize,
    pub eval_every: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    /// First restart period; a single cycle over the whole run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_period: Option<usize>,
    #[serde(default = "default_mult")]
    pub restart_mult: f64,
    #[serde(default)]
    pub floor_lr: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    pub data_seed: u64,
}

fn default_mult() -> f64 {
    1.0
}

/// Seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub order: u64,
    pub dropout: u64,
    pub perturbation: u64,
}

impl RunSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self { init: seed, order: mix(seed, 1), dropout: mix(seed, 2), perturbation: mix(seed, 3) }
    }
}

/// SplitMix64 finalizer of `a` combined with `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl LanguageConfig {
    pub fn build(&self) -> Result<Language> {
        Ok(match *self {
            LanguageConfig::Linear { m, nnz_offset, matrix_seed, noise, noise_scope, pad_count } => {
                let matrix = linear_matrix(m, nnz_offset, matrix_seed)?;
                let mut spec = LinearLangSpec::new(matrix, noise, pad_count)?;
                spec.noise_scope = noise_scope;
                Language::Linear(spec)
            }
            LanguageConfig::Primes { k } => Language::Primes(PrimeLangSpec::new(k)?),
            LanguageConfig::MultToy => Language::Finite(mult_toy_language()),
        })
    }
}

/// The seeded `m x m` invertible matrix with `m + nnz_offset` ones.
pub fn linear_matrix(m: usize, nnz_offset: usize, seed: u64) -> Result<F2Matrix> {
    if m == 0 || nnz_offset > m * m - m {
        return config_err(format!("nnz offset {nnz_offset} impossible for m = {m}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gen_sparse_invertible(m, m + nnz_offset, &mut rng)?)
}

impl ModelConfig {
    pub fn named(size: &str, dropout: f64) -> Self {
        Self { size: Some(size.to_string()), d_embed: None, n_heads: None, n_layers: None, dropout }
    }

    pub fn custom(d_embed: usize, n_heads: usize, n_layers: usize, dropout: f64) -> Self {
        Self { size: None, d_embed: Some(d_embed), n_heads: Some(n_heads), n_layers: Some(n_layers), dropout }
    }

    pub fn transformer(&self, vocab_size: usize, context: usize) -> Result<TransformerConfig> {
        let cfg = match (&self.size, self.d_embed, self.n_heads, self.n_layers) {
            (Some(name), None, None, None) => TransformerConfig::named(name, vocab_size, context)?,
            (None, Some(d), Some(h), Some(l)) => TransformerConfig::new(d, h, l, context, vocab_size)?,
            _ => {
                let names: Vec<&str> = NAMED_SIZES.iter().map(|s| s.0).collect();
                return config_err(format!(
                    "model needs either a size ({}) or all of d_embed, n_heads and n_layers",
                    names.join(", ")
                ));
            }
        };
        Ok(cfg.with_dropout(self.dropout)?)
    }
}

/// Sentences and vocabulary shared by every run of a specification.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub language: Language,
    /// Language vocabulary with BOS appended.
    pub vocab: Vocab,
    pub bos: TokenId,
    pub train: SentenceSet,
    pub val: SentenceSet,
}

impl Dataset {
    pub fn sentence_len(&self) -> usize {
        self.language.sentence_len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Samples `n_train + n_val` sentences under `seed` and splits them.
    pub fn sample(language: Language, n_train: usize, n_val: usize, seed: u64) -> Result<Self> {
        if n_train == 0 || n_val == 0 {
            return config_err("train and validation sets must be nonempty");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<Vec<TokenId>> = (0..n_train + n_val).map(|_| language.sample(&mut rng).0).collect();
        let (train, val) = shuffle_split(&corpus, mix(seed, 7), n_val)?;
        let (vocab, bos) = language.vocab().with_bos();
        Ok(Self { language, vocab, bos, train, val })
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return config_err("at least one seed is required");
        }
        if self.directions.is_empty() {
            return config_err("at least one direction is required");
        }
        let t = &self.train;
        if t.batch_size == 0 || t.steps == 0 || t.eval_every == 0 {
            return config_err("batch_size, steps and eval_every must be positive");
        }
        if t.train_sentences == 0 || t.val_sentences == 0 {
            return config_err("train_sentences and val_sentences must be positive");
        }
        if let LanguageConfig::Linear { m, nnz_offset, noise, .. } = self.language {
            if m == 0 || nnz_offset > m * m - m {
                return config_err(format!("nnz offset {nnz_offset} impossible for m = {m}"));
            }
            if !(0.0..=0.5).contains(&noise) {
                return config_err(format!("noise {noise} outside [0, 0.5]"));
            }
        }
        self.schedule()?;
        let o = &t.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return config_err("optimizer hyperparameters out of range");
        }
        // Dimensions are checked against a placeholder vocabulary.
        self.model.transformer(2, 1)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        let t = &self.train;
        let s = match t.restart_period {
            None => LrSchedule { floor_lr: t.floor_lr, ..LrSchedule::single_cycle(t.lr, t.warmup_steps, t.steps)? },
            Some(period) => LrSchedule {
                base_lr: t.lr,
                warmup_steps: t.warmup_steps,
                period,
                period_mult: t.restart_mult,
                floor_lr: t.floor_lr,
            },
        };
        s.validate()?;
        Ok(s)
    }

    /// FNV-1a of the canonical JSON form, as 16 hex digits.
    pub fn config_hash(&self) -> String {
        let mut h = Fnv64::default();
        h.write(serde_json::to_string(self).expect("serializable").as_bytes());
        format!("{:016x}", h.0)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let t = &self.train;
        Dataset::sample(self.language.build()?, t.train_sentences, t.val_sentences, t.data_seed)
    }

    /// The published protocol: GPT1-sized model, 600k sentences in batches
    /// of 200, base learning rate 1e-4 and dropout 0.1.
    pub fn to_paper_scale(&self) -> Self {
        let mut s = self.clone();
        s.model = ModelConfig::named("gpt1", DEFAULT_DROPOUT);
        s.train.batch_size = 200;
        s.train.train_sentences = 600_000;
        s.train.steps = 600_000 / 200;
        s.train.lr = 1e-4;
        s.train.eval_every = s.train.eval_every.min(s.train.steps);
        if let LanguageConfig::Linear { m, .. } = &mut s.language {
            *m = (*m).max(25);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> &'static str {
        r#"{
            "schema_version": 1,
            "language": {"kind": "linear", "m": 4, "nnz_offset": 2, "matrix_seed": 9, "noise": 0.01},
            "model": {"d_embed": 16, "n_heads": 2, "n_layers": 1, "dropout": 0.0},
            "train": {"batch_size": 8, "steps": 20, "train_sentences": 64, "val_sentences": 16,
                      "eval_every": 10, "lr": 0.001, "data_seed": 5},
            "seeds": [1, 2]
        }"#
    }

    #[test]
    fn parses_with_defaults_and_round_trips() {
        let spec = ExperimentSpec::from_json(sample_json()).unwrap();
        assert_eq!(spec.directions, Direction::BOTH.to_vec());
        assert_eq!(spec.train.optimizer, AdamWConfig::default());
        let again = ExperimentSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.config_hash(), spec.config_hash());
        let s = spec.schedule().unwrap();
        assert_eq!(s.period, 20);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for (from, to) in [
            ("\"seeds\"", "\"bogus\": 1, \"seeds\""),
            ("\"noise\": 0.01", "\"noise\": 0.01, \"extra\": 2"),
            ("\"dropout\": 0.0", "\"dropout\": 0.0, \"tied\": true"),
            ("\"data_seed\": 5", "\"data_seed\": 5, \"epochs\": 3"),
        ] {
            let text = sample_json().replace(from, to);
            assert!(ExperimentSpec::from_json(&text).is_err(), "{to}");
        }
    }

    #[test]
    fn semantic_validation() {
        for (from, to) in [
            ("\"schema_version\": 1", "\"schema_version\": 2"),
            ("[1, 2]", "[]"),
            ("\"lr\": 0.001", "\"lr\": 0.0"),
            ("\"nnz_offset\": 2", "\"nnz_offset\": 13"),
            ("\"n_heads\": 2", "\"n_heads\": 3"),
            ("\"d_embed\": 16, ", ""),
        ] {
            let text = sample_json().replace(from, to);
            assert!(ExperimentSpec::from_json(&text).is_err(), "{to}");
        }
    }

    #[test]
    fn dataset_is_seeded() {
        let spec = ExperimentSpec::from_json(sample_json()).unwrap();
        let a = spec.dataset().unwrap();
        let b = spec.dataset().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!((a.train.len(), a.val.len()), (64, 16));
        assert_eq!(a.bos, 3);
        assert_eq!(a.vocab_size(), 4);
        assert_eq!(a.sentence_len(), 15);
    }

    #[test]
    fn paper_scale_is_valid() {
        let spec = ExperimentSpec::from_json(sample_json()).unwrap().to_paper_scale();
        spec.validate().unwrap();
        assert_eq!(spec.train.batch_size, 200);
        assert_eq!(spec.model.transformer(4, 256).unwrap().d_embed, 768);
    }

    #[test]
    fn seeds_are_distinct() {
        let s = RunSeeds::from_seed(1);
        assert_ne!(s.order, s.dropout);
        assert_ne!(RunSeeds::from_seed(2).order, s.order);
    }
}
