//! Central finite-difference check of reverse-mode gradients.
//!
//! The analytic gradient is computed in the precision under test; the
//! numerical reference always runs in `f64`. The output is contracted with
//! random upstream weights so that every output element contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Float, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE_F32: f64 = 1e-4;
pub const TOLERANCE_F64: f64 = 1e-6;

/// A computation checked by [`check`], generic over precision.
pub trait Differentiable {
    fn build<G: Float>(&self, g: &mut Graph<G>, inputs: &[Var]) -> Result<Var>;

    /// Fresh graph for one evaluation; override to fix dropout masks.
    fn graph<G: Float>(&self) -> Graph<G> {
        Graph::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over all checked
    /// entries.
    pub rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes<F: Float>(&self) -> bool {
        self.rel_error < tolerance::<F>()
    }
}

pub fn tolerance<F: Float>() -> f64 {
    if F::BYTES <= 4 {
        TOLERANCE_F32
    } else {
        TOLERANCE_F64
    }
}

fn evaluate<G: Float, D: Differentiable>(op: &D, inputs: &[Tensor<f64>], wrt: &[bool]) -> Result<(Graph<G>, Vec<Var>, Var)> {
    let mut g = op.graph::<G>();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(wrt)
        .map(|(t, &w)| if w { g.param(&t.cast()) } else { g.constant(&t.cast()) })
        .collect();
    let out = op.build(&mut g, &vars)?;
    Ok((g, vars, out))
}

fn contract(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Compares the `F` gradient of the inputs flagged in `wrt` with central
/// differences of the `f64` forward pass.
pub fn check<F: Float, D: Differentiable>(op: &D, inputs: &[Tensor<f64>], wrt: &[bool], seed: u64) -> Result<GradCheck> {
    if inputs.len() != wrt.len() {
        return Err(NnError::InvalidArgument("one wrt flag per input is required".into()));
    }
    let (g64, _, out64) = evaluate::<f64, D>(op, inputs, wrt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..g64.value(out64).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (mut g, vars, out) = evaluate::<F, D>(op, inputs, wrt)?;
    g.backward_with(out, weights.iter().map(|&w| F::lit(w)).collect())?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut perturbed = inputs.to_vec();
    for (i, &flag) in wrt.iter().enumerate() {
        if !flag {
            continue;
        }
        let grad: Vec<f64> = match g.grad(vars[i]) {
            Some(gr) => gr.iter().map(|v| v.to_f64().expect("finite")).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        analytic.extend(grad);
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let mut side = |v: f64| -> Result<f64> {
                perturbed[i].data_mut()[j] = v;
                let (g, _, o) = evaluate::<f64, D>(op, &perturbed, wrt)?;
                Ok(contract(g.value(o), &weights))
            };
            let plus = side(x + FD_STEP)?;
            let minus = side(x - FD_STEP)?;
            perturbed[i].data_mut()[j] = x;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
    }
    Ok(GradCheck { rel_error: relative_error(&analytic, &numeric), checked: numeric.len() })
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// The differentiable graph operations, each with a small random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCase {
    MatMul,
    Add,
    Mul,
    AddBias,
    Softmax,
    LayerNorm,
    Gelu,
    Embedding,
    Attention,
    Dropout,
    CrossEntropy,
}

const EMBED_IDS: [usize; 6] = [0, 2, 1, 2, 4, 0];
const CE_TARGETS: [usize; 4] = [1, 0, 3, 2];
const DROPOUT_SEED: u64 = 7;

impl OpCase {
    pub const ALL: [OpCase; 11] = [
        OpCase::MatMul,
        OpCase::Add,
        OpCase::Mul,
        OpCase::AddBias,
        OpCase::Softmax,
        OpCase::LayerNorm,
        OpCase::Gelu,
        OpCase::Embedding,
        OpCase::Attention,
        OpCase::Dropout,
        OpCase::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpCase::MatMul => "matmul",
            OpCase::Add => "add",
            OpCase::Mul => "mul",
            OpCase::AddBias => "add_bias",
            OpCase::Softmax => "softmax",
            OpCase::LayerNorm => "layernorm",
            OpCase::Gelu => "gelu",
            OpCase::Embedding => "embedding",
            OpCase::Attention => "causal_attention",
            OpCase::Dropout => "dropout",
            OpCase::CrossEntropy => "cross_entropy",
        }
    }

    /// Random inputs drawn from `seed`; every input is differentiated.
    pub fn inputs(self, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).expect("shape")
        };
        match self {
            OpCase::MatMul => vec![t(3, 4), t(4, 5)],
            OpCase::Add | OpCase::Mul => vec![t(3, 4), t(3, 4)],
            OpCase::AddBias => vec![t(3, 4), t(1, 4)],
            OpCase::Softmax | OpCase::Gelu | OpCase::Dropout => vec![t(3, 5)],
            OpCase::LayerNorm => vec![t(3, 6), t(1, 6), t(1, 6)],
            OpCase::Embedding => vec![t(5, 3)],
            // batch 2, seq 4, two heads of width 2
            OpCase::Attention => vec![t(8, 12)],
            OpCase::CrossEntropy => vec![t(4, 5)],
        }
    }

    /// Gradient check at the random point `seed`.
    pub fn check<F: Float>(self, seed: u64) -> Result<GradCheck> {
        let inputs = self.inputs(seed);
        let wrt = vec![true; inputs.len()];
        check::<F, _>(&self, &inputs, &wrt, seed ^ 0x5eed)
    }
}

impl Differentiable for OpCase {
    fn build<G: Float>(&self, g: &mut Graph<G>, x: &[Var]) -> Result<Var> {
        match self {
            OpCase::MatMul => g.matmul(x[0], x[1]),
            OpCase::Add => g.add(x[0], x[1]),
            OpCase::Mul => g.mul(x[0], x[1]),
            OpCase::AddBias => g.add_bias(x[0], x[1]),
            OpCase::Softmax => g.softmax(x[0]),
            OpCase::LayerNorm => g.layernorm(x[0], x[1], x[2]),
            OpCase::Gelu => g.gelu(x[0]),
            OpCase::Embedding => g.embedding(x[0], &EMBED_IDS),
            OpCase::Attention => g.causal_attention(x[0], 2, 4, 2),
            OpCase::Dropout => g.dropout(x[0], 0.3),
            OpCase::CrossEntropy => g.cross_entropy(x[0], &CE_TARGETS),
        }
    }

    fn graph<G: Float>(&self) -> Graph<G> {
        match self {
            OpCase::Dropout => Graph::training(ChaCha8Rng::seed_from_u64(DROPOUT_SEED)),
            _ => Graph::new(),
        }
    }
}
