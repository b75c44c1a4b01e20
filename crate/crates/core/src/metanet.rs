//! The weighting network: a one-hidden-layer MLP from a scalar loss to a
//! weight in `(0, 1)`.
//!
//! `theta` layout: input->hidden weights (`h`), hidden biases (`h`),
//! hidden->output weights (`h`), output bias (`1`).

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const DEFAULT_HIDDEN_WIDTH: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    hidden_width: usize,
    pub theta: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn theta_len(hidden_width: usize) -> usize {
    3 * hidden_width + 1
}

impl MetaModel {
    pub fn zeros(hidden_width: usize) -> Self {
        MetaModel {
            hidden_width,
            theta: vec![0.0; theta_len(hidden_width)],
        }
    }

    pub fn from_theta(hidden_width: usize, theta: Vec<f64>) -> Result<Self> {
        if hidden_width == 0 || theta.len() != theta_len(hidden_width) {
            return Err(Error::dim(format!(
                "theta of length {} does not fit hidden width {hidden_width}",
                theta.len()
            )));
        }
        Ok(MetaModel {
            hidden_width,
            theta,
        })
    }

    /// Uniform initialisation in `[-0.1, 0.1]`.
    pub fn init<R: Rng + ?Sized>(hidden_width: usize, rng: &mut R) -> Self {
        let theta = (0..theta_len(hidden_width))
            .map(|_| rng.random_range(-0.1..=0.1))
            .collect();
        MetaModel {
            hidden_width,
            theta,
        }
    }

    /// A model whose output is `sigmoid(output_bias)` for every input.
    pub fn constant_logit(hidden_width: usize, output_bias: f64) -> Self {
        let mut m = MetaModel::zeros(hidden_width);
        *m.theta.last_mut().expect("non-empty") = output_bias;
        m
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn parts(&self) -> (&[f64], &[f64], &[f64], f64) {
        let h = self.hidden_width;
        (
            &self.theta[..h],
            &self.theta[h..2 * h],
            &self.theta[2 * h..3 * h],
            self.theta[3 * h],
        )
    }

    fn pre_sigmoid(&self, loss: f64) -> f64 {
        let (w1, b1, w2, b2) = self.parts();
        let mut z = b2;
        for k in 0..self.hidden_width {
            let a = w1[k] * loss + b1[k];
            if a > 0.0 {
                z += w2[k] * a;
            }
        }
        z
    }

    pub fn weight_of(&self, loss: f64) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::numeric("meta-model", format!("loss {loss} is not finite")));
        }
        Ok(sigmoid(self.pre_sigmoid(loss)))
    }

    pub fn weights(&self, losses: &[f64]) -> Result<Vec<f64>> {
        losses.iter().map(|&l| self.weight_of(l)).collect()
    }

    /// Row `i` is the gradient of the weight for `losses[i]` w.r.t. `theta`.
    pub fn weight_grad_theta(&self, losses: &[f64]) -> Result<Tensor> {
        let h = self.hidden_width;
        let (w1, b1, w2, b2) = self.parts();
        let mut rows = Tensor::zeros(vec![losses.len(), self.param_count()]);
        for (i, &loss) in losses.iter().enumerate() {
            if !loss.is_finite() {
                return Err(Error::numeric("meta-model", format!("loss {loss} is not finite")));
            }
            let mut z = b2;
            for k in 0..h {
                let a = w1[k] * loss + b1[k];
                if a > 0.0 {
                    z += w2[k] * a;
                }
            }
            let s = sigmoid(z);
            let ds = s * (1.0 - s);
            let row = rows.row_mut(i);
            for k in 0..h {
                let a = w1[k] * loss + b1[k];
                if a > 0.0 {
                    let back = ds * w2[k];
                    row[k] = back * loss;
                    row[h + k] = back;
                    row[2 * h + k] = ds * a;
                }
            }
            row[3 * h] = ds;
        }
        Ok(rows)
    }
}
