use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, x)` with derivative 0 at the origin.
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Weight `(D_out, D_in)` and bias `(D_out)` of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    /// 1-based position in the network.
    pub layer_index: usize,
}

impl LayerParams {
    pub fn zeros(layer_index: usize, d_in: usize, d_out: usize) -> Self {
        LayerParams {
            weight: Tensor::zeros(vec![d_out, d_in]),
            bias: Tensor::zeros(vec![d_out]),
            layer_index,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.d_out() * (self.d_in() + 1)
    }
}

/// Feedforward classifier made of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredNetwork {
    layers: Vec<LayerParams>,
    /// One entry per hidden layer (`layers.len() - 1`).
    activations: Vec<Activation>,
    num_classes: usize,
}

/// Intermediate values of a forward pass needed by backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l` (0-based), shape `(n, D_in)`.
    pub inputs: Vec<Tensor>,
    /// `pre[l]` is the pre-activation output of layer `l`, shape `(n, D_out)`.
    pub pre: Vec<Tensor>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        self.pre.last().expect("network has at least one layer")
    }
}

impl LayeredNetwork {
    pub fn from_layers(layers: Vec<LayerParams>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for (pos, layer) in layers.iter().enumerate() {
            if layer.layer_index != pos + 1 {
                return Err(Error::Validation(format!(
                    "layer at position {pos} has index {}, expected {}",
                    layer.layer_index,
                    pos + 1
                )));
            }
            if layer.weight.rank() != 2 || layer.d_in() == 0 || layer.d_out() == 0 {
                return Err(Error::dim(format!("layer {} has a degenerate weight", pos + 1)));
            }
            if layer.bias.shape() != [layer.d_out()] {
                return Err(Error::dim(format!("layer {} bias shape", pos + 1)));
            }
        }
        for pair in layers.windows(2) {
            if pair[1].d_in() != pair[0].d_out() {
                return Err(Error::dim(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    pair[0].layer_index,
                    pair[0].d_out(),
                    pair[1].layer_index,
                    pair[1].d_in()
                )));
            }
        }
        let num_classes = layers.last().map(LayerParams::d_out).unwrap_or(0);
        let activations = vec![activation; layers.len() - 1];
        Ok(LayeredNetwork {
            layers,
            activations,
            num_classes,
        })
    }

    /// Zero-initialised network with the given layer widths `[D_0, D_1, ..., c]`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Validation(
                "need at least input and output widths".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerParams::zeros(i + 1, w[0], w[1]))
            .collect();
        LayeredNetwork::from_layers(layers, activation)
    }

    /// He-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = LayeredNetwork::zeros(widths, activation)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.d_in() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn set_activation(&mut self, hidden_layer: usize, activation: Activation) {
        self.activations[hidden_layer] = activation;
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LayerParams::d_out))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// Start offset of each layer in the flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        self.layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.param_count();
                Some(start)
            })
            .collect()
    }

    /// Parameters in flat order: layers ascending, weight before bias, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weight.len();
            layer.weight.data_mut().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.data_mut().copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Copy of this network carrying the given flat parameters.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_flat(flat)?;
        Ok(net)
    }

    fn check_inputs(&self, inputs: &Tensor) -> Result<()> {
        if inputs.rank() != 2 || inputs.shape()[1] != self.input_dim() {
            return Err(Error::dim(format!(
                "inputs of shape {:?} do not match input width {}",
                inputs.shape(),
                self.input_dim()
            )));
        }
        inputs.ensure_finite("forward input")
    }

    /// Logits `(n, c)` for a batch of inputs `(n, D_0)`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let cache = self.forward_cached(inputs)?;
        Ok(cache.pre.into_iter().last().expect("non-empty"))
    }

    pub fn forward_cached(&self, inputs: &Tensor) -> Result<ForwardCache> {
        self.check_inputs(inputs)?;
        let n = inputs.rows();
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (d_in, d_out) = (layer.d_in(), layer.d_out());
            let mut z = Tensor::zeros(vec![n, d_out]);
            let w = layer.weight.data();
            let b = layer.bias.data();
            for i in 0..n {
                let x = current.row(i);
                let zi = z.row_mut(i);
                for o in 0..d_out {
                    let wr = &w[o * d_in..(o + 1) * d_in];
                    zi[o] = b[o] + super::tensor::dot(wr, x);
                }
            }
            let next = if l + 1 < self.layers.len() {
                let act = self.activations[l];
                let mut a = z.clone();
                a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                Some(a)
            } else {
                None
            };
            layer_inputs.push(current);
            pre.push(z);
            if let Some(a) = next {
                current = a;
            } else {
                break;
            }
        }
        let cache = ForwardCache {
            inputs: layer_inputs,
            pre,
        };
        cache.logits().ensure_finite("forward")?;
        Ok(cache)
    }

    /// Fraction of rows whose arg-max logit equals `labels[i]`.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(inputs)?;
        if labels.len() != logits.rows() {
            return Err(Error::dim("label count differs from batch size"));
        }
        if labels.is_empty() {
            return Ok(0.0);
        }
        let correct = labels
            .iter()
            .enumerate()
            .filter(|(i, &y)| argmax(logits.row(*i)) == y)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}
