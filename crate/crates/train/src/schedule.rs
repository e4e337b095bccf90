//! Linear warmup followed by cosine annealing with warm restarts.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    /// Length of the first cosine cycle.
    pub period: usize,
    /// Each cycle is this many times longer than the previous one.
    #[serde(default = "default_mult")]
    pub period_mult: f64,
    #[serde(default)]
    pub floor_lr: f64,
}

fn default_mult() -> f64 {
    1.0
}

impl LrSchedule {
    /// A single cosine cycle spanning everything after warmup.
    pub fn single_cycle(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        let s = Self {
            base_lr,
            warmup_steps,
            period: total_steps.saturating_sub(warmup_steps).max(1),
            period_mult: 1.0,
            floor_lr: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return config_err(format!("base learning rate must be positive, got {}", self.base_lr));
        }
        if self.period == 0 {
            return config_err("restart period must be at least 1");
        }
        if !(self.period_mult >= 1.0 && self.period_mult.is_finite()) {
            return config_err(format!("period multiplier must be at least 1, got {}", self.period_mult));
        }
        if !(0.0..=self.base_lr).contains(&self.floor_lr) {
            return config_err(format!("floor learning rate {} outside [0, base]", self.floor_lr));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let (t, len) = self.cycle_position(step - self.warmup_steps);
        let cos = (std::f64::consts::PI * t / len).cos();
        self.floor_lr + (self.base_lr - self.floor_lr) * (1.0 + cos) / 2.0
    }

    /// Offset within the current cycle and that cycle's length.
    fn cycle_position(&self, mut t: usize) -> (f64, f64) {
        let mut len = self.period as f64;
        loop {
            let whole = len.round().max(1.0) as usize;
            if t < whole {
                return (t as f64, whole as f64);
            }
            t -= whole;
            len *= self.period_mult;
        }
    }
}
