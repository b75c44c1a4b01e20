use rand::Rng;

use crate::error::{Error, Result};

/// One relaxed categorical draw over two outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelSample {
    /// `softmax((logits + draws) / tau)`.
    pub soft: [f64; 2],
    /// One-hot arg-max of `logits + draws`.
    pub hard: [f64; 2],
    pub draws: [f64; 2],
}

impl GumbelSample {
    pub fn index(&self) -> usize {
        if self.hard[0] == 1.0 {
            0
        } else {
            1
        }
    }
}

/// Standard Gumbel variate `-ln(-ln u)`, redrawing `u` when it hits 0 or 1.
pub fn gumbel_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Deterministic part of the sampler: relaxation and arg-max for given noise.
pub fn gumbel_softmax_with_draws(logits: [f64; 2], draws: [f64; 2], tau: f64) -> Result<GumbelSample> {
    if !(tau > 0.0) {
        return Err(Error::Validation(format!("temperature {tau} must be positive")));
    }
    let y = [logits[0] + draws[0], logits[1] + draws[1]];
    let d = (y[1] - y[0]) / tau;
    // softmax over two entries as a logistic of the scaled gap
    let on = crate::metanet::sigmoid(-d);
    let soft = [on, 1.0 - on];
    let hard = if y[0] >= y[1] { [1.0, 0.0] } else { [0.0, 1.0] };
    Ok(GumbelSample { soft, hard, draws })
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: [f64; 2],
    tau: f64,
    rng: &mut R,
) -> Result<GumbelSample> {
    let draws = [gumbel_draw(rng), gumbel_draw(rng)];
    gumbel_softmax_with_draws(logits, draws, tau)
}
