//! AdamW with bias correction and decoupled weight decay.

use aot_nn::{Float, Param};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Whether weight decay applies to each tensor.
    decay: Vec<bool>,
}

/// Decay applies to projection matrices only, not to embeddings, biases
/// or layernorm parameters.
pub fn decays(name: &str) -> bool {
    name == "head" || name.contains(".w_")
}

impl AdamW {
    pub fn new<F: Float>(config: AdamWConfig, params: &[Param<F>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            decay: params.iter().map(|p| decays(&p.name)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. A missing gradient counts as zero.
    pub fn step<F: Float>(&mut self, params: &mut [Param<F>], grads: &[Option<&[F]>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Consistency("optimizer state does not match the parameters".into()));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.tensor.len() {
                    return Err(TrainError::Consistency(format!("gradient size mismatch for {}", p.name)));
                }
                if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                    return Err(TrainError::NumericFault {
                        step: self.step as usize,
                        detail: format!("non-finite gradient in {}[{bad}]", p.name),
                    });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if self.decay[i] { 1.0 - lr * c.weight_decay } else { 1.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.tensor.data_mut();
            for j in 0..data.len() {
                let gj = grads[i].map_or(0.0, |g| g[j].to_f64().expect("finite"));
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                let w = data[j].to_f64().expect("finite") * decay - update;
                data[j] = F::lit(w);
            }
        }
        Ok(())
    }
}
