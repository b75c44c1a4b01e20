use crate::error::{Error, Result};
use crate::nn::{LayerGradBatch, Tensor};

/// Per-output-channel summary of one layer's gradient, `D_out` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledGradFeature {
    pub layer_index: usize,
    pub values: Vec<f64>,
}

/// Averages a weight gradient over every axis but the first and adds the bias
/// gradient elementwise.
///
/// `weight` is `(D_out, D_in)` for dense layers or `(D_out, D_in, K1, K2)` for
/// kernels; `bias` is `(D_out)`.
pub fn avg_pool(layer_index: usize, weight: &Tensor, bias: &Tensor) -> Result<PooledGradFeature> {
    if weight.rank() < 2 {
        return Err(Error::dim("weight gradient needs at least two axes"));
    }
    let d_out = weight.shape()[0];
    if bias.shape() != [d_out] {
        return Err(Error::dim(format!(
            "bias gradient {:?} does not match D_out = {d_out}",
            bias.shape()
        )));
    }
    let values = pool_slices(weight.data(), bias.data(), d_out);
    Ok(PooledGradFeature {
        layer_index,
        values,
    })
}

fn pool_slices(weight: &[f64], bias: &[f64], d_out: usize) -> Vec<f64> {
    let per = weight.len() / d_out;
    (0..d_out)
        .map(|d| {
            let s: f64 = weight[d * per..(d + 1) * per].iter().sum();
            s / per as f64 + bias[d]
        })
        .collect()
}

/// Pooled feature of every example in a per-example gradient batch, `(n, D_out)`.
pub fn pool_examples(grads: &LayerGradBatch) -> Tensor {
    let (n, d_out) = (grads.batch_size(), grads.d_out());
    let mut out = Tensor::zeros(vec![n, d_out]);
    for i in 0..n {
        let v = pool_slices(grads.example_weight(i), grads.example_bias(i), d_out);
        out.row_mut(i).copy_from_slice(&v);
    }
    out
}
