use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// The meta gradient over `theta` and its per-layer contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub total: Vec<f64>,
    /// Keyed by 1-based layer index.
    pub per_layer: BTreeMap<usize, Vec<f64>>,
    /// Layers summed into `total`, ascending.
    pub active_layers: Vec<usize>,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
}

impl MetaGradient {
    pub fn active_count(&self) -> usize {
        self.active_layers.len()
    }
}

/// Layer-wise assembly of the meta gradient.
///
/// `similarity` maps each layer index to its `(n, m)` train/validation
/// similarity matrix, computed from unweighted training gradients.
/// `weight_grad_rows` is `(n, |theta|)` with row `i` the gradient of the
/// weight of training example `i`. Every layer present in `similarity` gets a
/// contribution `-alpha/(n*m) * sum_i (sum_j G[i,j]) * row_i`; `total` is the
/// sum of the contributions of the layers whose gate is on (all supplied
/// layers when `gates` is `None`), added in ascending layer order.
///
/// `gates[p]` is the gate of layer `p + 1`.
pub fn assemble_meta_gradient(
    similarity: &BTreeMap<usize, Tensor>,
    weight_grad_rows: &Tensor,
    gates: Option<&[bool]>,
    alpha: f64,
    n: usize,
    m: usize,
) -> Result<MetaGradient> {
    if weight_grad_rows.rank() != 2 || weight_grad_rows.rows() != n {
        return Err(Error::dim(format!(
            "weight gradient rows {:?} do not match n = {n}",
            weight_grad_rows.shape()
        )));
    }
    let theta_len = weight_grad_rows.shape()[1];
    let coeff = -alpha / (n as f64 * m as f64);
    let mut per_layer = BTreeMap::new();
    for (&l, g) in similarity {
        if g.shape() != [n, m] {
            return Err(Error::dim(format!(
                "similarity of layer {l} has shape {:?}, expected [{n}, {m}]",
                g.shape()
            )));
        }
        let mut acc = vec![0.0; theta_len];
        for i in 0..n {
            let s: f64 = g.row(i).iter().sum();
            for (a, r) in acc.iter_mut().zip(weight_grad_rows.row(i)) {
                *a += s * r;
            }
        }
        acc.iter_mut().for_each(|a| *a *= coeff);
        per_layer.insert(l, acc);
    }

    let active_layers: Vec<usize> = match gates {
        None => per_layer.keys().copied().collect(),
        Some(gates) => {
            let on: Vec<usize> = gates
                .iter()
                .enumerate()
                .filter(|(_, &g)| g)
                .map(|(p, _)| p + 1)
                .collect();
            if let Some(missing) = on.iter().find(|l| !per_layer.contains_key(l)) {
                return Err(Error::dim(format!(
                    "gate of layer {missing} is on but its similarity was not computed"
                )));
            }
            on
        }
    };
    let mut total = vec![0.0; theta_len];
    for l in &active_layers {
        for (t, v) in total.iter_mut().zip(&per_layer[l]) {
            *t += v;
        }
    }
    Ok(MetaGradient {
        total,
        per_layer,
        active_layers,
        alpha,
        n,
        m,
    })
}
