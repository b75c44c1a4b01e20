use super::assemble::MetaGradient;
use super::pool::PooledGradFeature;
use super::sampler::{GateBank, GateDecision};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Active-layer count regulariser and its gradient per sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct LossR {
    pub value: f64,
    /// `grad_eta[p]` belongs to the sampler of layer `p + 1`.
    pub grad_eta: Vec<Vec<f64>>,
}

/// `(sum_l r_l - K)^2` on hard gates, differentiated straight-through: the
/// hard count sets the outer factor, the soft gates carry the derivative.
pub fn loss_r(bank: &GateBank, decision: &GateDecision, k: usize) -> Result<LossR> {
    if decision.gates.len() != bank.num_layers() {
        return Err(Error::dim("gate decision does not cover every sampler"));
    }
    if k == 0 || k > bank.num_layers() {
        return Err(Error::config(format!("K = {k} outside [1, {}]", bank.num_layers())));
    }
    let excess = decision.active_count() as f64 - k as f64;
    let value = excess * excess;
    let outer = 2.0 * excess;
    let grad_eta = bank
        .samplers
        .iter()
        .zip(&decision.gates)
        .map(|(s, g)| {
            let slope = g.soft * (1.0 - g.soft) / decision.tau;
            let d_on = outer * slope;
            s.backward(&g.feature, [d_on, -d_on])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossR { value, grad_eta })
}

/// Pooled-gradient mismatch at the last layer and its `theta` gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossG {
    pub value: f64,
    pub grad_theta: Vec<f64>,
}

pub fn loss_g_value(train: &PooledGradFeature, val: &PooledGradFeature) -> Result<f64> {
    if train.values.len() != val.values.len() {
        return Err(Error::dim(format!(
            "training feature has {} values, validation feature {}",
            train.values.len(),
            val.values.len()
        )));
    }
    Ok(train
        .values
        .iter()
        .zip(&val.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `||g_tra - g_val||^2` with its gradient through the example weights inside
/// `g_tra = (1/n) sum_i V_i(theta) pool_i`.
///
/// `pooled_examples` is `(n, D_out)`, row `i` the pooled unweighted gradient
/// of training example `i` at the last layer. The validation feature is held
/// constant.
pub fn loss_g(
    train: &PooledGradFeature,
    val: &PooledGradFeature,
    pooled_examples: &Tensor,
    weight_grad_rows: &Tensor,
) -> Result<LossG> {
    let value = loss_g_value(train, val)?;
    let n = pooled_examples.rows();
    if pooled_examples.row_len() != train.values.len() || weight_grad_rows.rows() != n {
        return Err(Error::dim("pooled examples and weight rows disagree with the features"));
    }
    let diff: Vec<f64> = train.values.iter().zip(&val.values).map(|(a, b)| a - b).collect();
    let mut grad_theta = vec![0.0; weight_grad_rows.row_len()];
    for i in 0..n {
        let c = 2.0 * crate::nn::dot(&diff, pooled_examples.row(i)) / n as f64;
        for (g, r) in grad_theta.iter_mut().zip(weight_grad_rows.row(i)) {
            *g += c * r;
        }
    }
    Ok(LossG { value, grad_theta })
}

/// Gradients of the combined meta objective for one joint update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaObjectiveGrads {
    pub grad_theta: Vec<f64>,
    pub grad_eta: Vec<Vec<f64>>,
}

/// `grad_theta = g' + lambda2 * dL_g/dtheta`, `grad_eta = lambda1 * dL_r/deta`.
///
/// Terms whose weight is zero (or which are absent) are skipped entirely, so
/// `grad_theta` is then bitwise equal to the gated meta gradient.
pub fn meta_objective_grads(
    meta_gradient: &MetaGradient,
    loss_g: Option<&LossG>,
    loss_r: Option<&LossR>,
    lambda1: f64,
    lambda2: f64,
) -> Result<MetaObjectiveGrads> {
    let mut grad_theta = meta_gradient.total.clone();
    if let Some(lg) = loss_g.filter(|_| lambda2 != 0.0) {
        if lg.grad_theta.len() != grad_theta.len() {
            return Err(Error::dim("L_g gradient length differs from theta"));
        }
        for (g, v) in grad_theta.iter_mut().zip(&lg.grad_theta) {
            *g += lambda2 * v;
        }
    }
    let grad_eta = match loss_r {
        Some(lr) => lr
            .grad_eta
            .iter()
            .map(|g| g.iter().map(|v| lambda1 * v).collect())
            .collect(),
        None => Vec::new(),
    };
    Ok(MetaObjectiveGrads {
        grad_theta,
        grad_eta,
    })
}
