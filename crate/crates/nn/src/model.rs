//! Decoder-only transformer: pre-layernorm blocks, learned positional
//! embeddings, GELU MLP, untied output head without bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Float, Tensor};

pub const DEFAULT_MLP_RATIO: usize = 4;
pub const DEFAULT_DROPOUT: f64 = 0.1;
/// Vocabulary size of the GPT-2 tokenizer, used for the published sizes.
pub const GPT2_VOCAB: usize = 50257;
pub const DEFAULT_CONTEXT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_embed: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub context: usize,
    pub vocab_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

fn default_mlp_ratio() -> usize {
    DEFAULT_MLP_RATIO
}

/// `(name, d_embed, n_heads, n_layers)` of the published model sizes.
pub const NAMED_SIZES: [(&str, usize, usize, usize); 7] = [
    ("nano", 48, 3, 3),
    ("micro", 128, 4, 4),
    ("mini", 192, 6, 6),
    ("small", 380, 10, 10),
    ("gpt1", 768, 12, 12),
    ("medium", 1024, 16, 24),
    ("xl", 1600, 25, 48),
];

impl TransformerConfig {
    pub fn new(d_embed: usize, n_heads: usize, n_layers: usize, context: usize, vocab_size: usize) -> Result<Self> {
        let cfg = Self {
            d_embed,
            n_heads,
            n_layers,
            context,
            vocab_size,
            dropout: DEFAULT_DROPOUT,
            mlp_ratio: DEFAULT_MLP_RATIO,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One of [`NAMED_SIZES`] with the given vocabulary and context.
    pub fn named(name: &str, vocab_size: usize, context: usize) -> Result<Self> {
        let &(_, d, h, l) = NAMED_SIZES
            .iter()
            .find(|(n, ..)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| NnError::InvalidArgument(format!("unknown model size {name:?}")))?;
        Self::new(d, h, l, context, vocab_size)
    }

    pub fn with_dropout(mut self, dropout: f64) -> Result<Self> {
        self.dropout = dropout;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidArgument(m));
        if self.d_embed == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return bad("d_embed, n_heads and n_layers must be positive".into());
        }
        if self.d_embed % self.n_heads != 0 {
            return bad(format!("d_embed {} is not divisible by n_heads {}", self.d_embed, self.n_heads));
        }
        if self.context == 0 || self.vocab_size == 0 || self.mlp_ratio == 0 {
            return bad("context, vocab_size and mlp_ratio must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.mlp_ratio * self.d_embed
    }

    /// Shapes of all parameters, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, v, h) = (self.d_embed, self.vocab_size, self.hidden());
        let mut out = vec![("wte".to_string(), vec![v, d]), ("wpe".to_string(), vec![self.context, d])];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("h{l}.{s}");
            out.extend([
                (p("ln1.g"), vec![d]),
                (p("ln1.b"), vec![d]),
                (p("attn.w_qkv"), vec![d, 3 * d]),
                (p("attn.b_qkv"), vec![3 * d]),
                (p("attn.w_proj"), vec![d, d]),
                (p("attn.b_proj"), vec![d]),
                (p("ln2.g"), vec![d]),
                (p("ln2.b"), vec![d]),
                (p("mlp.w_fc"), vec![d, h]),
                (p("mlp.b_fc"), vec![h]),
                (p("mlp.w_proj"), vec![h, d]),
                (p("mlp.b_proj"), vec![d]),
            ]);
        }
        out.push(("lnf.g".to_string(), vec![d]));
        out.push(("lnf.b".to_string(), vec![d]));
        out.push(("head".to_string(), vec![d, v]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: TransformerConfig,
    params: Vec<Param<F>>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// One handle per parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Per-layer handles into `Forward::params`.
const PER_LAYER: usize = 12;

impl<F: Float> Model<F> {
    /// He-normal weights (`std = sqrt(2 / fan_in)`, embeddings with
    /// `fan_in = d_embed`), zero biases, unit layernorm gains and a zero
    /// output head so the initial prediction is uniform.
    pub fn init(config: &TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_embed;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name == "head" || name.ends_with(".b") || name.contains(".b_") {
                    vec![F::zero(); n]
                } else if name.ends_with(".g") {
                    vec![F::one(); n]
                } else {
                    let fan_in = if name == "wte" || name == "wpe" { d } else { shape[0] };
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| F::lit(normal.sample(&mut rng))).collect()
                };
                Ok(Param { name, tensor: Tensor::new(shape, data)? })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config: config.clone(), params })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_params(config: TransformerConfig, params: Vec<Param<F>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(NnError::Format(format!("expected {} tensors, found {}", shapes.len(), params.len())));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if name != &p.name || shape.as_slice() != p.tensor.shape() {
                return Err(NnError::Format(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<G: Float>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Param { name: p.name.clone(), tensor: p.tensor.cast() }).collect(),
        }
    }

    /// Records the forward pass on `g`. `ids` holds `batch` rows of `seq`
    /// tokens; row `t` of the logits predicts token `t + 1`.
    pub fn forward(&self, g: &mut Graph<F>, ids: &[usize], batch: usize, seq: usize) -> Result<Forward> {
        let cfg = &self.config;
        if seq == 0 || seq > cfg.context {
            return Err(NnError::InvalidArgument(format!("sequence length {seq} outside 1..={}", cfg.context)));
        }
        if ids.len() != batch * seq {
            return Err(NnError::Shape(format!("{} token ids for batch {batch} x seq {seq}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(NnError::InvalidArgument(format!("token id {bad} >= vocabulary size {}", cfg.vocab_size)));
        }
        let vars: Vec<Var> = self.params.iter().map(|p| g.param(&p.tensor)).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let tok = g.embedding(vars[0], ids)?;
        let pos = g.embedding(vars[1], &positions)?;
        let mut x = g.add(tok, pos)?;
        x = g.dropout(x, cfg.dropout)?;
        for l in 0..cfg.n_layers {
            let w = &vars[2 + l * PER_LAYER..2 + (l + 1) * PER_LAYER];
            let h = g.layernorm(x, w[0], w[1])?;
            let qkv = g.matmul(h, w[2])?;
            let qkv = g.add_bias(qkv, w[3])?;
            let a = g.causal_attention(qkv, batch, seq, cfg.n_heads)?;
            let a = g.matmul(a, w[4])?;
            let a = g.add_bias(a, w[5])?;
            let a = g.dropout(a, cfg.dropout)?;
            x = g.add(x, a)?;
            let h = g.layernorm(x, w[6], w[7])?;
            let f = g.matmul(h, w[8])?;
            let f = g.add_bias(f, w[9])?;
            let f = g.gelu(f)?;
            let f = g.matmul(f, w[10])?;
            let f = g.add_bias(f, w[11])?;
            let f = g.dropout(f, cfg.dropout)?;
            x = g.add(x, f)?;
        }
        let n = vars.len();
        let x = g.layernorm(x, vars[n - 3], vars[n - 2])?;
        let logits = g.matmul(x, vars[n - 1])?;
        Ok(Forward { logits, params: vars })
    }

    /// Evaluation-mode logits, `batch * seq` rows of `vocab_size` values.
    pub fn logits(&self, ids: &[usize], batch: usize, seq: usize) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, ids, batch, seq)?;
        Ok(g.value(f.logits).to_vec())
    }

    /// Evaluation-mode loss of `targets` given `ids`.
    pub fn evaluate(&self, ids: &[usize], targets: &[usize], batch: usize, seq: usize) -> Result<TokenLosses<F>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, ids, batch, seq)?;
        loss_and_per_token(&mut g, f.logits, targets, seq)
    }
}

/// Mean loss and its breakdown over positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLosses<F> {
    pub loss: Var,
    pub mean: F,
    /// Mean over the batch at each position.
    pub per_position: Vec<F>,
    /// One loss per row of the logits.
    pub per_token: Vec<F>,
}

/// Cross-entropy in nats of `targets` (already shifted by the caller) against
/// `logits` rows laid out as `batch x seq`.
pub fn loss_and_per_token<F: Float>(g: &mut Graph<F>, logits: Var, targets: &[usize], seq: usize) -> Result<TokenLosses<F>> {
    if seq == 0 || targets.len() % seq != 0 {
        return Err(NnError::Shape(format!("{} targets do not split into rows of {seq}", targets.len())));
    }
    let loss = g.cross_entropy(logits, targets)?;
    let per_token = g.row_losses(loss).expect("cross-entropy node").to_vec();
    let batch = F::from_usize(targets.len() / seq).expect("usize");
    let mut per_position = vec![F::zero(); seq];
    for row in per_token.chunks(seq) {
        per_position.iter_mut().zip(row).for_each(|(p, &l)| *p += l);
    }
    per_position.iter_mut().for_each(|p| *p /= batch);
    Ok(TokenLosses { loss, mean: g.scalar(loss), per_position, per_token })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(vocab: usize) -> TransformerConfig {
        TransformerConfig::new(16, 2, 2, 8, vocab).unwrap().with_dropout(0.0).unwrap()
    }

    fn random_ids(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..v)).collect()
    }

    #[test]
    fn published_parameter_counts() {
        for (name, expected) in [("nano", 4.92e6), ("micro", 13.7e6), ("mini", 22.0e6), ("small", 55.6e6), ("gpt1", 162e6), ("medium", 405e6), ("xl", 1.6e9)] {
            let cfg = TransformerConfig::named(name, GPT2_VOCAB, DEFAULT_CONTEXT).unwrap();
            let count = cfg.param_count() as f64;
            // "1.6B" is rounded to two significant digits.
            let tol = if name == "xl" { 0.03 } else { 0.01 };
            assert!((count / expected - 1.0).abs() < tol, "{name}: {count}");
        }
        let nano = TransformerConfig::named("Nano", GPT2_VOCAB, DEFAULT_CONTEXT).unwrap();
        assert_eq!(nano.param_count(), 4_921_872);
    }

    #[test]
    fn config_validation() {
        assert!(TransformerConfig::new(10, 3, 1, 8, 5).is_err());
        assert!(TransformerConfig::new(12, 3, 1, 8, 5).unwrap().with_dropout(1.0).is_err());
        assert!(TransformerConfig::named("huge", 5, 8).is_err());
        let json = r#"{"d_embed":12,"n_heads":3,"n_layers":1,"context":8,"vocab_size":5,"extra":1}"#;
        assert!(serde_json::from_str::<TransformerConfig>(json).is_err());
        let json = r#"{"d_embed":12,"n_heads":3,"n_layers":1,"context":8,"vocab_size":5}"#;
        let cfg: TransformerConfig = serde_json::from_str(json).unwrap();
        assert_eq!((cfg.dropout, cfg.mlp_ratio), (0.1, 4));
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let cfg = tiny(7);
        let a = Model::<f32>::init(&cfg, 3).unwrap();
        assert_eq!(a, Model::<f32>::init(&cfg, 3).unwrap());
        assert_ne!(a, Model::<f32>::init(&cfg, 4).unwrap());
        for p in a.params() {
            if p.name.contains(".b") || p.name == "head" {
                assert!(p.tensor.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
        assert_eq!(a.param_count(), cfg.param_count());
    }

    #[test]
    fn he_variance() {
        let cfg = TransformerConfig::new(256, 4, 1, 8, 11).unwrap();
        let m = Model::<f64>::init(&cfg, 9).unwrap();
        let w = m.param("h0.attn.w_proj").unwrap().data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / (2.0 / 256.0) - 1.0).abs() < 0.1, "{var}");
        let wte = m.param("wte").unwrap().data();
        let var = wte.iter().map(|x| x * x).sum::<f64>() / wte.len() as f64;
        assert!((var / (2.0 / 256.0) - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn fresh_loss_is_log_vocab() {
        let v = 13;
        let model = Model::<f32>::init(&tiny(v), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids = random_ids(&mut rng, 4 * 8, v);
        let targets = random_ids(&mut rng, 4 * 8, v);
        let l = model.evaluate(&ids, &targets, 4, 8).unwrap();
        assert!(((l.mean as f64) / (v as f64).ln() - 1.0).abs() < 0.05);
        assert_eq!(l.per_position.len(), 8);
        assert_eq!(l.per_token.len(), 32);
    }

    #[test]
    fn uniform_and_perfect_logits() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(&Tensor::zeros(vec![6, 5]));
        let l = loss_and_per_token(&mut g, logits, &[0, 1, 2, 3, 4, 0], 3).unwrap();
        assert!((l.mean - 5f64.ln()).abs() < 1e-12);
        assert!(l.per_position.iter().all(|&p| (p - 5f64.ln()).abs() < 1e-12));
        let mut onehot = vec![0.0; 10];
        onehot[1] = 800.0;
        onehot[5 + 3] = 800.0;
        let logits = g.constant(&Tensor::new(vec![2, 5], onehot).unwrap());
        assert_eq!(loss_and_per_token(&mut g, logits, &[1, 3], 2).unwrap().mean, 0.0);
        assert!(loss_and_per_token(&mut g, logits, &[1, 3], 3).is_err());
    }

    fn trained_like(v: usize, seed: u64) -> Model<f64> {
        // A random head so outputs depend on the inputs.
        let mut m = Model::<f64>::init(&tiny(v), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in m.params_mut() {
            if p.name == "head" {
                p.tensor.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
            }
        }
        m
    }

    #[test]
    fn causality_under_edits() {
        let (v, seq) = (9, 8);
        let m = trained_like(v, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ids = random_ids(&mut rng, seq, v);
        let base = m.logits(&ids, 1, seq).unwrap();
        for t in 0..seq {
            let mut edited = ids.clone();
            edited[t] = (edited[t] + 1) % v;
            let after = m.logits(&edited, 1, seq).unwrap();
            assert_eq!(&base[..t * v], &after[..t * v], "position {t}");
            assert_ne!(&base[t * v..(t + 1) * v], &after[t * v..(t + 1) * v]);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let (v, seq, batch) = (9, 6, 4);
        let m = trained_like(v, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = random_ids(&mut rng, batch * seq, v);
        let base = m.logits(&ids, batch, seq).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<usize> = perm.iter().flat_map(|&r| ids[r * seq..(r + 1) * seq].to_vec()).collect();
        let after = m.logits(&permuted, batch, seq).unwrap();
        let row = seq * v;
        for (i, &r) in perm.iter().enumerate() {
            for (a, b) in after[i * row..(i + 1) * row].iter().zip(&base[r * row..(r + 1) * row]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = Model::<f32>::init(&tiny(5), 0).unwrap();
        assert!(matches!(m.logits(&[0; 9], 1, 9), Err(NnError::InvalidArgument(_))));
        assert!(matches!(m.logits(&[0, 5], 1, 2), Err(NnError::InvalidArgument(_))));
        assert!(matches!(m.logits(&[0; 3], 1, 2), Err(NnError::Shape(_))));
    }

    #[test]
    fn eval_forward_is_deterministic_and_training_dropout_seeded() {
        let cfg = TransformerConfig::new(16, 2, 1, 8, 5).unwrap();
        let m = Model::<f32>::init(&cfg, 0).unwrap();
        let ids = [1, 2, 3, 4];
        assert_eq!(m.logits(&ids, 1, 4).unwrap(), m.logits(&ids, 1, 4).unwrap());
        let run = |seed| {
            let mut g = Graph::training(ChaCha8Rng::seed_from_u64(seed));
            let f = m.forward(&mut g, &ids, 1, 4).unwrap();
            let x = g.value(f.params[0]).len();
            (x, g.value(f.logits).to_vec())
        };
        assert_eq!(run(1), run(1));
    }
}
