use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metanet::DEFAULT_HIDDEN_WIDTH;
use crate::metrics::DEFAULT_GRAD_WINDOW;

/// Multiplies the base learning rate by `factor` every `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub every: u64,
    pub factor: f64,
}

/// Hyperparameters of the three-stage loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Base-network learning rate.
    pub alpha: f64,
    /// Meta-model learning rate.
    pub beta: f64,
    pub meta_momentum: f64,
    /// Momentum of the committed base update; 0 gives the plain weighted step.
    pub base_momentum: f64,
    pub sampler_lr: f64,
    pub sampler_momentum: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Target active-layer count used when a Famus strategy does not name one.
    pub k: usize,
    pub tau: f64,
    /// Training mini-batch size `n`.
    pub batch_size: usize,
    /// Validation mini-batch size `m`.
    pub val_batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub histogram_bins: usize,
    pub meta_hidden: usize,
    pub grad_window: usize,
    pub lr_decay: Option<LrDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            beta: 0.01,
            meta_momentum: 0.9,
            base_momentum: 0.0,
            sampler_lr: 0.1,
            sampler_momentum: 0.9,
            lambda1: 0.1,
            lambda2: 0.1,
            k: 4,
            tau: 1.0,
            batch_size: 100,
            val_batch_size: 100,
            iterations: 5000,
            seed: 0,
            eval_every: 50,
            histogram_bins: 10,
            meta_hidden: DEFAULT_HIDDEN_WIDTH,
            grad_window: DEFAULT_GRAD_WINDOW,
            lr_decay: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {v} must be positive")))
    }
}

fn momentum(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {v} must lie in [0, 1)")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("sampler_lr", self.sampler_lr)?;
        positive("tau", self.tau)?;
        momentum("meta_momentum", self.meta_momentum)?;
        momentum("base_momentum", self.base_momentum)?;
        momentum("sampler_momentum", self.sampler_momentum)?;
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} = {v} must be non-negative")));
            }
        }
        for (name, v) in [
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("val_batch_size", self.val_batch_size),
            ("histogram_bins", self.histogram_bins),
            ("meta_hidden", self.meta_hidden),
            ("grad_window", self.grad_window),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 {
                return Err(Error::config("lr_decay.every must be at least 1"));
            }
            positive("lr_decay.factor", d.factor)?;
        }
        Ok(())
    }

    /// Base learning rate after the configured decay.
    pub fn alpha_at(&self, iteration: u64) -> f64 {
        match self.lr_decay {
            Some(d) => self.alpha * d.factor.powi((iteration / d.every) as i32),
            None => self.alpha,
        }
    }
}
