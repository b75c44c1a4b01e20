use crate::error::{Error, Result};

/// Heavy-ball SGD: `v <- m*v + g; p <- p - lr*v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentumState {
    pub velocity: Vec<f64>,
    pub momentum: f64,
    pub learning_rate: f64,
}

impl SgdMomentumState {
    pub fn new(param_count: usize, learning_rate: f64, momentum: f64) -> Self {
        SgdMomentumState {
            velocity: vec![0.0; param_count],
            momentum,
            learning_rate,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::dim(format!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grad.len()
            )));
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        Ok(())
    }
}

/// Functional form of [`SgdMomentumState::step`].
pub fn sgd_momentum_step(
    params: &[f64],
    grad: &[f64],
    state: &mut SgdMomentumState,
) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step(&mut out, grad)?;
    Ok(out)
}
