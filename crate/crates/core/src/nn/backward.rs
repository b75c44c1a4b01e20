use super::loss::{labels_from_one_hot, log_sum_exp, softmax_into};
use super::network::{ForwardCache, LayeredNetwork};
use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

/// Per-example gradients of one layer: weight `(n, D_out, D_in)`, bias `(n, D_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradBatch {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerGradBatch {
    pub fn batch_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn example_weight(&self, i: usize) -> &[f64] {
        self.weight.row(i)
    }

    pub fn example_bias(&self, i: usize) -> &[f64] {
        self.bias.row(i)
    }

    /// Dot product over weight and bias of example `i` here with example `j` of `other`.
    pub fn dot_examples(&self, i: usize, other: &LayerGradBatch, j: usize) -> f64 {
        dot(self.example_weight(i), other.example_weight(j))
            + dot(self.example_bias(i), other.example_bias(j))
    }

    /// `(1/n) * sum_i coeffs[i] * g_i`, as (weight `(D_out, D_in)`, bias `(D_out)`).
    pub fn weighted_mean(&self, coeffs: &[f64]) -> (Tensor, Tensor) {
        let n = self.batch_size();
        let mut w = Tensor::zeros(vec![self.d_out(), self.d_in()]);
        let mut b = Tensor::zeros(vec![self.d_out()]);
        for (i, &c) in coeffs.iter().enumerate().take(n) {
            for (acc, g) in w.data_mut().iter_mut().zip(self.example_weight(i)) {
                *acc += c * g;
            }
            for (acc, g) in b.data_mut().iter_mut().zip(self.example_bias(i)) {
                *acc += c * g;
            }
        }
        let inv = 1.0 / n as f64;
        w.data_mut().iter_mut().for_each(|v| *v *= inv);
        b.data_mut().iter_mut().for_each(|v| *v *= inv);
        (w, b)
    }
}

/// Per-example gradients for every (or a masked subset of) layer.
#[derive(Debug, Clone)]
pub struct PerExampleGrads {
    /// Indexed by 0-based layer position; `None` where the layer was masked out.
    pub per_layer: Vec<Option<LayerGradBatch>>,
    pub batch_size: usize,
    /// Unweighted per-example losses from the same forward pass.
    pub losses: Vec<f64>,
}

impl PerExampleGrads {
    /// Gradients of layer `layer_index` (1-based).
    pub fn layer(&self, layer_index: usize) -> Result<&LayerGradBatch> {
        layer_index
            .checked_sub(1)
            .and_then(|p| self.per_layer.get(p))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::dim(format!("no gradients for layer {layer_index}")))
    }

    pub fn has_layer(&self, layer_index: usize) -> bool {
        self.layer(layer_index).is_ok()
    }

    /// Flat `(1/n) * sum_i coeffs[i] * g_i` over all layers in network order.
    pub fn weighted_mean_flat(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.batch_size {
            return Err(Error::dim("coefficient count differs from batch size"));
        }
        let mut out = Vec::new();
        for (pos, layer) in self.per_layer.iter().enumerate() {
            let layer = layer
                .as_ref()
                .ok_or_else(|| Error::dim(format!("layer {} was masked out", pos + 1)))?;
            let (w, b) = layer.weighted_mean(coeffs);
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        Ok(out)
    }

    /// Mean of the stored entries (unit coefficients).
    pub fn mean_flat(&self) -> Result<Vec<f64>> {
        self.weighted_mean_flat(&vec![1.0; self.batch_size])
    }
}

fn validate_weights(n: usize, loss_weights: &[f64]) -> Result<()> {
    if loss_weights.len() != n {
        return Err(Error::dim(format!(
            "{} loss weights for a batch of {n}",
            loss_weights.len()
        )));
    }
    if let Some(w) = loss_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Validation(format!("loss weight {w} is not a finite non-negative value")));
    }
    Ok(())
}

/// Walks the layers top-down from the output, handing each visited layer its
/// output deltas `(n, D_out)` and inputs `(n, D_in)`. Stops after `lowest`.
fn backprop<F>(
    net: &LayeredNetwork,
    cache: &ForwardCache,
    labels: &[usize],
    loss_weights: &[f64],
    lowest: usize,
    mut visit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &Tensor, &Tensor),
{
    let logits = cache.logits();
    let n = logits.rows();
    let c = net.num_classes();
    let mut losses = Vec::with_capacity(n);
    let mut delta = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let row = logits.row(i);
        let y = labels[i];
        losses.push((log_sum_exp(row) - row[y]).max(0.0));
        let d = delta.row_mut(i);
        softmax_into(row, d);
        d[y] -= 1.0;
        d.iter_mut().for_each(|v| *v *= loss_weights[i]);
    }
    let layers = net.layers();
    for l in (lowest..layers.len()).rev() {
        delta.ensure_finite("backward")?;
        visit(l, &delta, &cache.inputs[l]);
        if l == lowest {
            break;
        }
        let layer = &layers[l];
        let (d_in, d_out) = (layer.d_in(), layer.d_out());
        let w = layer.weight.data();
        let act = net.activations()[l - 1];
        let below = &cache.pre[l - 1];
        let mut next = Tensor::zeros(vec![n, d_in]);
        for i in 0..n {
            let di = delta.row(i);
            let out = next.row_mut(i);
            for (o, &dv) in di.iter().enumerate().take(d_out) {
                if dv == 0.0 {
                    continue;
                }
                let wr = &w[o * d_in..(o + 1) * d_in];
                for (acc, wv) in out.iter_mut().zip(wr) {
                    *acc += wv * dv;
                }
            }
            for (acc, z) in out.iter_mut().zip(below.row(i)) {
                *acc *= act.derivative(*z);
            }
        }
        delta = next;
    }
    Ok(losses)
}

/// Per-example gradients of `loss_weights[i] * loss_i` for every layer.
pub fn per_example_backward(
    net: &LayeredNetwork,
    inputs: &Tensor,
    labels: &Tensor,
    loss_weights: &[f64],
) -> Result<PerExampleGrads> {
    let labels = labels_from_one_hot(labels)?;
    let mask = vec![true; net.num_layers()];
    per_example_backward_masked(net, inputs, &labels, loss_weights, &mask)
}

/// Per-example gradients restricted to the layers where `mask` is set.
///
/// Deltas are only propagated down to the lowest requested layer, so masking
/// out the bottom of the network saves the corresponding backward work.
pub fn per_example_backward_masked(
    net: &LayeredNetwork,
    inputs: &Tensor,
    labels: &[usize],
    loss_weights: &[f64],
    mask: &[bool],
) -> Result<PerExampleGrads> {
    let n = inputs.rows();
    validate_weights(n, loss_weights)?;
    if labels.len() != n {
        return Err(Error::dim("label count differs from batch size"));
    }
    if mask.len() != net.num_layers() {
        return Err(Error::dim("layer mask length differs from layer count"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::Validation(format!("label {y} out of range")));
    }
    let cache = net.forward_cached(inputs)?;
    let mut per_layer: Vec<Option<LayerGradBatch>> = vec![None; net.num_layers()];
    let Some(lowest) = mask.iter().position(|&m| m) else {
        let losses = super::loss::cross_entropy_indices(cache.logits(), labels)?;
        return Ok(PerExampleGrads {
            per_layer,
            batch_size: n,
            losses,
        });
    };
    let losses = backprop(net, &cache, labels, loss_weights, lowest, |l, delta, input| {
        if !mask[l] {
            return;
        }
        let (d_out, d_in) = (delta.shape()[1], input.shape()[1]);
        let mut w = Tensor::zeros(vec![n, d_out, d_in]);
        for i in 0..n {
            let x = input.row(i);
            let dst = w.row_mut(i);
            for (o, &dv) in delta.row(i).iter().enumerate() {
                let out = &mut dst[o * d_in..(o + 1) * d_in];
                for (g, xv) in out.iter_mut().zip(x) {
                    *g = dv * xv;
                }
            }
        }
        per_layer[l] = Some(LayerGradBatch {
            weight: w,
            bias: delta.clone(),
        });
    })?;
    Ok(PerExampleGrads {
        per_layer,
        batch_size: n,
        losses,
    })
}

/// Flat gradient of `(1/n) * sum_i loss_weights[i] * loss_i`, reduced over the
/// batch inside each layer rather than per example.
pub fn batch_backward(
    net: &LayeredNetwork,
    inputs: &Tensor,
    labels: &[usize],
    loss_weights: &[f64],
) -> Result<Vec<f64>> {
    let n = inputs.rows();
    validate_weights(n, loss_weights)?;
    if labels.len() != n {
        return Err(Error::dim("label count differs from batch size"));
    }
    let cache = net.forward_cached(inputs)?;
    let offsets = net.layer_offsets();
    let mut grad = vec![0.0; net.param_count()];
    let inv = 1.0 / n as f64;
    backprop(net, &cache, labels, loss_weights, 0, |l, delta, input| {
        let (d_out, d_in) = (delta.shape()[1], input.shape()[1]);
        let base = offsets[l];
        for o in 0..d_out {
            for k in 0..d_in {
                let mut s = 0.0;
                for i in 0..n {
                    s += delta.at2(i, o) * input.at2(i, k);
                }
                grad[base + o * d_in + k] = s * inv;
            }
            let mut s = 0.0;
            for i in 0..n {
                s += delta.at2(i, o);
            }
            grad[base + d_out * d_in + o] = s * inv;
        }
    })?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::{cross_entropy_indices, one_hot};
    use crate::nn::network::Activation;
    use crate::rng::stream_raw;
    use rand::Rng;

    fn instance(seed: u64, widths: &[usize], n: usize) -> (LayeredNetwork, Tensor, Vec<usize>) {
        let mut rng = stream_raw(seed, 0);
        let net = LayeredNetwork::init(widths, Activation::Relu, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..*widths.last().unwrap())).collect();
        (net, Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let (net, x, y) = instance(1, &[4, 6, 3], 3);
        let g = per_example_backward(&net, &x, &one_hot(&y, 3).unwrap(), &[0.0; 3]).unwrap();
        for layer in g.per_layer.iter().flatten() {
            assert!(layer.weight.data().iter().all(|&v| v == 0.0));
            assert!(layer.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_example_equals_batch_backward() {
        let (net, x, y) = instance(2, &[4, 6, 3], 1);
        let g = per_example_backward(&net, &x, &one_hot(&y, 3).unwrap(), &[1.0]).unwrap();
        let batch = batch_backward(&net, &x, &y, &[1.0]).unwrap();
        assert_eq!(g.mean_flat().unwrap(), batch);
    }

    #[test]
    fn per_example_matches_central_differences() {
        let (net, x, y) = instance(3, &[5, 7, 6, 4], 3);
        let g = per_example_backward(&net, &x, &one_hot(&y, 4).unwrap(), &[1.0; 3]).unwrap();
        let flat = net.flatten();
        let offsets = net.layer_offsets();
        for i in 0..3 {
            let xi = Tensor::new(vec![1, 5], x.row(i).to_vec()).unwrap();
            let loss = |p: &[f64]| {
                let logits = net.with_flat(p).unwrap().forward(&xi).unwrap();
                cross_entropy_indices(&logits, &[y[i]]).unwrap()[0]
            };
            for (l, layer) in g.per_layer.iter().enumerate() {
                let layer = layer.as_ref().unwrap();
                let analytic: Vec<f64> = layer
                    .example_weight(i)
                    .iter()
                    .chain(layer.example_bias(i))
                    .copied()
                    .collect();
                for (k, a) in analytic.iter().enumerate() {
                    let idx = offsets[l] + k;
                    let h = 1e-6;
                    let mut p = flat.clone();
                    p[idx] += h;
                    let up = loss(&p);
                    p[idx] -= 2.0 * h;
                    let down = loss(&p);
                    let fd = (up - down) / (2.0 * h);
                    assert!(
                        (a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-3),
                        "example {i} layer {l} coord {k}: {a} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn mask_skips_layers() {
        let (net, x, y) = instance(4, &[3, 5, 5, 2], 2);
        let mask = [false, true, false];
        let g = per_example_backward_masked(&net, &x, &y, &[1.0; 2], &mask).unwrap();
        assert!(g.per_layer[0].is_none() && g.per_layer[2].is_none());
        let full = per_example_backward_masked(&net, &x, &y, &[1.0; 2], &[true; 3]).unwrap();
        assert_eq!(g.per_layer[1], full.per_layer[1]);
        assert_eq!(g.losses, full.losses);
        assert!(g.layer(1).is_err());
        assert!(g.mean_flat().is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        let (net, x, y) = instance(5, &[3, 2], 2);
        assert!(per_example_backward_masked(&net, &x, &y, &[1.0], &[true]).is_err());
        assert!(per_example_backward_masked(&net, &x, &y, &[1.0, -1.0], &[true]).is_err());
    }

    #[test]
    fn nan_inputs_are_numeric_errors() {
        let (net, _, y) = instance(6, &[3, 4, 2], 1);
        let x = Tensor::from_rows(&[vec![f64::NAN, 0.0, 1.0]]).unwrap();
        assert!(matches!(
            per_example_backward_masked(&net, &x, &y[..1], &[1.0], &[true, true]),
            Err(Error::Numeric { .. })
        ));
    }
}
