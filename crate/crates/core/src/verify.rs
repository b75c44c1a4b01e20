//! Reference computations for every analytic gradient in the crate.
//!
//! Nothing here calls the analytic backward passes, the meta-model gradient
//! or the layer-wise assembly: the oracles recompute everything with plain
//! loops or central differences so that agreement means something.

use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::metanet::MetaModel;
use crate::nn::{Activation, Batch, LayeredNetwork};

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Step relative to the magnitude of the perturbed coordinate.
    pub step: f64,
    /// Absolute lower bound on the step.
    pub floor: f64,
    pub tolerance: f64,
}

impl OracleConfig {
    /// Settings for the hypergradient oracle.
    pub fn hypergradient() -> Self {
        OracleConfig {
            step: 1e-4,
            floor: 1e-6,
            tolerance: 1e-4,
        }
    }

    /// Settings for plain first-order gradients.
    pub fn first_order() -> Self {
        OracleConfig {
            step: 1e-6,
            floor: 1e-6,
            tolerance: 1e-5,
        }
    }

    pub fn step_for(&self, x: f64) -> f64 {
        (self.step * x.abs()).max(self.floor)
    }

    fn check(&self) -> Result<()> {
        if !(self.step > 0.0 && self.floor > 0.0) {
            return Err(Error::config("finite-difference step must be positive"));
        }
        Ok(())
    }
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig::hypergradient()
    }
}

/// `max_k |a_k - r_k| / max_k |r_k|`: the error measured against the scale of
/// the reference vector. Zero when both vectors are identically zero.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    if worst == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        worst / scale
    }
}

/// Coordinates whose error exceeds `tol` under [`max_relative_error`]'s scale.
pub fn offending_coordinates(analytic: &[f64], reference: &[f64], tol: f64) -> Vec<usize> {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(reference)
        .enumerate()
        .filter(|(_, (a, r))| (*a - *r).abs() > tol * scale)
        .map(|(k, _)| k)
        .collect()
}

/// Central-difference gradient of `f` at `params`.
pub fn fd_first_order<F>(f: F, params: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.check()?;
    let grad: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map(|k| {
            let h = cfg.step_for(params[k]);
            let mut p = params.to_vec();
            p[k] = params[k] + h;
            let up = f(&p);
            p[k] = params[k] - h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect();
    ensure_finite("finite differences", &grad)?;
    Ok(grad)
}

// --- naive network ---------------------------------------------------------

/// Layer shapes `(d_in, d_out)` and flat offsets derived from widths alone.
struct Layout {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
    activation: Vec<Activation>,
}

impl Layout {
    fn of(net: &LayeredNetwork) -> Layout {
        let widths = net.widths();
        let mut shapes = Vec::new();
        let mut offsets = Vec::new();
        let mut at = 0;
        for w in widths.windows(2) {
            offsets.push(at);
            shapes.push((w[0], w[1]));
            at += w[0] * w[1] + w[1];
        }
        Layout {
            shapes,
            offsets,
            total: at,
            activation: net.activations().to_vec(),
        }
    }

    fn w(&self, p: &[f64], l: usize, o: usize, i: usize) -> f64 {
        let (d_in, _) = self.shapes[l];
        p[self.offsets[l] + o * d_in + i]
    }

    fn b(&self, p: &[f64], l: usize, o: usize) -> f64 {
        let (d_in, d_out) = self.shapes[l];
        p[self.offsets[l] + d_out * d_in + o]
    }
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

fn act_prime(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - x.tanh().powi(2),
        Activation::Identity => 1.0,
    }
}

/// Pre-activations of every layer for one input.
fn naive_forward(layout: &Layout, p: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut pre = Vec::new();
    let mut a = x.to_vec();
    for (l, &(d_in, d_out)) in layout.shapes.iter().enumerate() {
        let mut z = vec![0.0; d_out];
        for o in 0..d_out {
            let mut s = layout.b(p, l, o);
            for i in 0..d_in {
                s += layout.w(p, l, o, i) * a[i];
            }
            z[o] = s;
        }
        if l + 1 < layout.shapes.len() {
            a = z.iter().map(|&v| act(layout.activation[l], v)).collect();
        }
        pre.push(z);
    }
    pre
}

fn naive_loss(logits: &[f64], y: usize) -> f64 {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    -(logits[y].exp() / z).ln()
}

/// Cross-entropy of one example, computed without shifting (small nets only).
pub fn naive_example_loss(net: &LayeredNetwork, params: &[f64], x: &[f64], y: usize) -> f64 {
    let layout = Layout::of(net);
    let pre = naive_forward(&layout, params, x);
    naive_loss(pre.last().expect("non-empty"), y)
}

/// Flat gradient of one example's loss by explicit scalar backpropagation.
pub fn naive_example_gradient(net: &LayeredNetwork, params: &[f64], x: &[f64], y: usize) -> Vec<f64> {
    let layout = Layout::of(net);
    let pre = naive_forward(&layout, params, x);
    let last = pre.last().expect("non-empty");
    let z: f64 = last.iter().map(|v| v.exp()).sum();
    let mut delta: Vec<f64> = last
        .iter()
        .enumerate()
        .map(|(k, v)| v.exp() / z - if k == y { 1.0 } else { 0.0 })
        .collect();
    let mut grad = vec![0.0; layout.total];
    for l in (0..layout.shapes.len()).rev() {
        let (d_in, d_out) = layout.shapes[l];
        let input: Vec<f64> = if l == 0 {
            x.to_vec()
        } else {
            pre[l - 1].iter().map(|&v| act(layout.activation[l - 1], v)).collect()
        };
        for o in 0..d_out {
            for i in 0..d_in {
                grad[layout.offsets[l] + o * d_in + i] = delta[o] * input[i];
            }
            grad[layout.offsets[l] + d_out * d_in + o] = delta[o];
        }
        if l > 0 {
            let mut below = vec![0.0; d_in];
            for i in 0..d_in {
                let mut s = 0.0;
                for o in 0..d_out {
                    s += layout.w(params, l, o, i) * delta[o];
                }
                below[i] = s * act_prime(layout.activation[l - 1], pre[l - 1][i]);
            }
            delta = below;
        }
    }
    grad
}

// --- naive meta-model ------------------------------------------------------

fn naive_meta_weight(theta: &[f64], hidden: usize, loss: f64) -> f64 {
    let mut z = theta[3 * hidden];
    for k in 0..hidden {
        z += theta[2 * hidden + k] * (theta[k] * loss + theta[hidden + k]).max(0.0);
    }
    1.0 / (1.0 + (-z).exp())
}

fn naive_meta_gradient(theta: &[f64], hidden: usize, loss: f64) -> Vec<f64> {
    let s = naive_meta_weight(theta, hidden, loss);
    let ds = s * (1.0 - s);
    let mut g = vec![0.0; theta.len()];
    for k in 0..hidden {
        let a = theta[k] * loss + theta[hidden + k];
        if a > 0.0 {
            g[k] = ds * theta[2 * hidden + k] * loss;
            g[hidden + k] = ds * theta[2 * hidden + k];
            g[2 * hidden + k] = ds * a;
        }
    }
    g[3 * hidden] = ds;
    g
}

// --- hypergradient oracles -------------------------------------------------

fn check_batches(net: &LayeredNetwork, train: &Batch, val: &Batch) -> Result<()> {
    for b in [train, val] {
        if b.is_empty() || b.inputs.row_len() != net.input_dim() {
            return Err(Error::dim("oracle batch does not match the network input"));
        }
    }
    Ok(())
}

/// Central-difference gradient of the mean validation loss after one weighted
/// SGD step, w.r.t. every meta-model parameter. The whole pipeline (weights,
/// virtual step, validation loss) is recomputed for each perturbation.
pub fn fd_hypergradient(
    net: &LayeredNetwork,
    meta: &MetaModel,
    train: &Batch,
    val: &Batch,
    alpha: f64,
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    check_batches(net, train, val)?;
    let w = net.flatten();
    let n = train.len();
    let train_grads: Vec<Vec<f64>> = (0..n)
        .map(|i| naive_example_gradient(net, &w, train.inputs.row(i), train.labels[i]))
        .collect();
    let train_losses: Vec<f64> = (0..n)
        .map(|i| naive_example_loss(net, &w, train.inputs.row(i), train.labels[i]))
        .collect();
    ensure_finite("oracle training losses", &train_losses)?;

    let val_loss = |w_hat: &[f64]| -> f64 {
        let total: f64 = (0..val.len())
            .map(|j| naive_example_loss(net, w_hat, val.inputs.row(j), val.labels[j]))
            .sum();
        total / val.len() as f64
    };
    fd_hypergradient_with(meta, &w, &train_losses, &train_grads, val_loss, alpha, cfg)
}

/// Hypergradient oracle for an arbitrary base model given as flat parameters
/// `w`, per-example training losses and gradients at `w`, and a validation
/// objective of the updated parameters.
pub fn fd_hypergradient_with<V>(
    meta: &MetaModel,
    w: &[f64],
    train_losses: &[f64],
    train_grads: &[Vec<f64>],
    val_objective: V,
    alpha: f64,
    cfg: &OracleConfig,
) -> Result<Vec<f64>>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    let hidden = meta.hidden_width();
    let n = train_losses.len();
    if train_grads.len() != n || train_grads.iter().any(|g| g.len() != w.len()) {
        return Err(Error::dim("training gradients do not match the parameters"));
    }
    let objective = |theta: &[f64]| -> f64 {
        let mut w_hat = w.to_vec();
        for i in 0..n {
            let v = naive_meta_weight(theta, hidden, train_losses[i]);
            for (p, g) in w_hat.iter_mut().zip(&train_grads[i]) {
                *p -= alpha * v * g / n as f64;
            }
        }
        val_objective(&w_hat)
    };
    fd_first_order(objective, &meta.theta, cfg)
}

/// The layer-wise meta gradient recomputed by an explicit loop over training
/// examples, validation examples, layers and meta parameters, keeping only the
/// layers where `layer_mask` is set.
pub fn masked_oracle(
    net: &LayeredNetwork,
    meta: &MetaModel,
    train: &Batch,
    val: &Batch,
    alpha: f64,
    layer_mask: &[bool],
) -> Result<Vec<f64>> {
    check_batches(net, train, val)?;
    let layout = Layout::of(net);
    if layer_mask.len() != layout.shapes.len() {
        return Err(Error::dim("layer mask length differs from layer count"));
    }
    let w = net.flatten();
    let hidden = meta.hidden_width();
    let (n, m) = (train.len(), val.len());
    let losses: Vec<f64> = (0..n)
        .map(|i| naive_example_loss(net, &w, train.inputs.row(i), train.labels[i]))
        .collect();
    let train_grads: Vec<Vec<f64>> = (0..n)
        .map(|i| naive_example_gradient(net, &w, train.inputs.row(i), train.labels[i]))
        .collect();
    let mut w_hat = w.clone();
    for i in 0..n {
        let v = naive_meta_weight(&meta.theta, hidden, losses[i]);
        for (p, g) in w_hat.iter_mut().zip(&train_grads[i]) {
            *p -= alpha * v * g / n as f64;
        }
    }
    let val_grads: Vec<Vec<f64>> = (0..m)
        .map(|j| naive_example_gradient(net, &w_hat, val.inputs.row(j), val.labels[j]))
        .collect();
    let weight_grads: Vec<Vec<f64>> = losses
        .iter()
        .map(|&l| naive_meta_gradient(&meta.theta, hidden, l))
        .collect();
    let coeff = -alpha / (n * m) as f64;
    let mut out = vec![0.0; meta.theta.len()];
    for (l, &(d_in, d_out)) in layout.shapes.iter().enumerate() {
        if !layer_mask[l] {
            continue;
        }
        let range = layout.offsets[l]..layout.offsets[l] + d_out * d_in + d_out;
        for i in 0..n {
            for j in 0..m {
                let mut g = 0.0;
                for p in range.clone() {
                    g += val_grads[j][p] * train_grads[i][p];
                }
                for (k, o) in out.iter_mut().enumerate() {
                    *o += coeff * g * weight_grads[i][k];
                }
            }
        }
    }
    ensure_finite("masked oracle", &out)?;
    Ok(out)
}
