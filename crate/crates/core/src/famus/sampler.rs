use rand::Rng;

use super::gumbel::{gumbel_draw, gumbel_softmax_with_draws};
use super::pool::PooledGradFeature;
use crate::error::{Error, Result};

/// Hidden width of every sampler.
pub const SAMPLER_HIDDEN: usize = 128;
const PRELU_INIT: f64 = 0.25;

/// Per-layer gate network: `FC(D_out -> 128)`, PReLU, `FC(128 -> 2)`.
///
/// Output coordinate 0 is "on". `eta` layout: FC1 weight `(128, D_out)`,
/// FC1 bias, PReLU slope, FC2 weight `(2, 128)`, FC2 bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSampler {
    pub layer_index: usize,
    d_in: usize,
    pub eta: Vec<f64>,
}

/// Intermediates of one sampler evaluation.
#[derive(Debug, Clone)]
struct SamplerPass {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: [f64; 2],
}

impl GradientSampler {
    pub fn param_count_for(d_in: usize) -> usize {
        SAMPLER_HIDDEN * d_in + SAMPLER_HIDDEN + 1 + 2 * SAMPLER_HIDDEN + 2
    }

    pub fn zeros(layer_index: usize, d_in: usize) -> Self {
        GradientSampler {
            layer_index,
            d_in,
            eta: vec![0.0; Self::param_count_for(d_in)],
        }
    }

    /// FC weights uniform in `±1/sqrt(fan_in)`, zero biases, PReLU slope 0.25.
    pub fn init<R: Rng + ?Sized>(layer_index: usize, d_in: usize, rng: &mut R) -> Self {
        let mut s = GradientSampler::zeros(layer_index, d_in);
        let b1 = 1.0 / (d_in as f64).sqrt();
        let b2 = 1.0 / (SAMPLER_HIDDEN as f64).sqrt();
        let o = s.offsets();
        for w in &mut s.eta[o.fc1_w..o.fc1_b] {
            *w = rng.random_range(-b1..b1);
        }
        s.eta[o.prelu] = PRELU_INIT;
        for w in &mut s.eta[o.fc2_w..o.fc2_b] {
            *w = rng.random_range(-b2..b2);
        }
        s
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn param_count(&self) -> usize {
        self.eta.len()
    }

    fn offsets(&self) -> Offsets {
        let fc1_b = SAMPLER_HIDDEN * self.d_in;
        let prelu = fc1_b + SAMPLER_HIDDEN;
        let fc2_w = prelu + 1;
        let fc2_b = fc2_w + 2 * SAMPLER_HIDDEN;
        Offsets {
            fc1_w: 0,
            fc1_b,
            prelu,
            fc2_w,
            fc2_b,
        }
    }

    /// Mutable view of the two FC2 output biases.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.eta[o.fc2_b..o.fc2_b + 2]
    }

    /// Zeroes FC2 weights and sets its biases, fixing the logits for any input.
    pub fn pin_logits(&mut self, logits: [f64; 2]) {
        let o = self.offsets();
        self.eta[o.fc2_w..o.fc2_b].iter_mut().for_each(|w| *w = 0.0);
        self.eta[o.fc2_b] = logits[0];
        self.eta[o.fc2_b + 1] = logits[1];
    }

    fn pass(&self, feature: &[f64]) -> Result<SamplerPass> {
        if feature.len() != self.d_in {
            return Err(Error::dim(format!(
                "sampler of layer {} expects {} inputs, got {}",
                self.layer_index,
                self.d_in,
                feature.len()
            )));
        }
        let o = self.offsets();
        let slope = self.eta[o.prelu];
        let mut hidden_pre = vec![0.0; SAMPLER_HIDDEN];
        let mut hidden = vec![0.0; SAMPLER_HIDDEN];
        for h in 0..SAMPLER_HIDDEN {
            let w = &self.eta[o.fc1_w + h * self.d_in..o.fc1_w + (h + 1) * self.d_in];
            let z = self.eta[o.fc1_b + h] + crate::nn::dot(w, feature);
            hidden_pre[h] = z;
            hidden[h] = if z > 0.0 { z } else { slope * z };
        }
        let mut logits = [0.0; 2];
        for (k, logit) in logits.iter_mut().enumerate() {
            let w = &self.eta[o.fc2_w + k * SAMPLER_HIDDEN..o.fc2_w + (k + 1) * SAMPLER_HIDDEN];
            *logit = self.eta[o.fc2_b + k] + crate::nn::dot(w, &hidden);
        }
        Ok(SamplerPass {
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn logits(&self, feature: &[f64]) -> Result<[f64; 2]> {
        Ok(self.pass(feature)?.logits)
    }

    /// Gradient w.r.t. `eta` given the gradient w.r.t. the two logits.
    pub fn backward(&self, feature: &[f64], d_logits: [f64; 2]) -> Result<Vec<f64>> {
        let pass = self.pass(feature)?;
        let o = self.offsets();
        let slope = self.eta[o.prelu];
        let mut grad = vec![0.0; self.eta.len()];
        let mut d_hidden = vec![0.0; SAMPLER_HIDDEN];
        for (k, &dl) in d_logits.iter().enumerate() {
            grad[o.fc2_b + k] = dl;
            let w = &self.eta[o.fc2_w + k * SAMPLER_HIDDEN..o.fc2_w + (k + 1) * SAMPLER_HIDDEN];
            for h in 0..SAMPLER_HIDDEN {
                grad[o.fc2_w + k * SAMPLER_HIDDEN + h] = dl * pass.hidden[h];
                d_hidden[h] += dl * w[h];
            }
        }
        let mut d_slope = 0.0;
        for h in 0..SAMPLER_HIDDEN {
            let z = pass.hidden_pre[h];
            let dz = if z > 0.0 {
                d_hidden[h]
            } else {
                d_slope += d_hidden[h] * z;
                d_hidden[h] * slope
            };
            grad[o.fc1_b + h] = dz;
            let row = &mut grad[o.fc1_w + h * self.d_in..o.fc1_w + (h + 1) * self.d_in];
            for (g, x) in row.iter_mut().zip(feature) {
                *g = dz * x;
            }
        }
        grad[o.prelu] = d_slope;
        Ok(grad)
    }
}

struct Offsets {
    fc1_w: usize,
    fc1_b: usize,
    prelu: usize,
    fc2_w: usize,
    fc2_b: usize,
}

/// Gate outcome of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGate {
    pub layer_index: usize,
    /// Relaxed "on" probability.
    pub soft: f64,
    pub hard: bool,
    pub logits: [f64; 2],
    pub gumbel_draws: [f64; 2],
    /// Sampler input the decision was made from.
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub gates: Vec<LayerGate>,
    pub tau: f64,
}

impl GateDecision {
    pub fn hard_mask(&self) -> Vec<bool> {
        self.gates.iter().map(|g| g.hard).collect()
    }

    pub fn active_count(&self) -> usize {
        self.gates.iter().filter(|g| g.hard).count()
    }

    pub fn soft_sum(&self) -> f64 {
        self.gates.iter().map(|g| g.soft).sum()
    }
}

/// One sampler per base-network layer plus the gating hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBank {
    pub samplers: Vec<GradientSampler>,
    pub temperature: f64,
    pub expected_active: usize,
}

impl GateBank {
    /// `layer_widths[p]` is `D_out` of layer `p + 1`.
    pub fn init<R: Rng + ?Sized>(
        layer_widths: &[usize],
        temperature: f64,
        expected_active: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let samplers = layer_widths
            .iter()
            .enumerate()
            .map(|(p, &d)| GradientSampler::init(p + 1, d, rng))
            .collect();
        GateBank::new(samplers, temperature, expected_active)
    }

    pub fn new(samplers: Vec<GradientSampler>, temperature: f64, expected_active: usize) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::config(format!("temperature {temperature} must be positive")));
        }
        if expected_active == 0 || expected_active > samplers.len() {
            return Err(Error::config(format!(
                "expected active layers {expected_active} outside [1, {}]",
                samplers.len()
            )));
        }
        Ok(GateBank {
            samplers,
            temperature,
            expected_active,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.samplers.len()
    }

    /// Fixes every sampler's logits so that its gate is (practically) always on
    /// or always off.
    pub fn pin(&mut self, on: bool) {
        let logits = if on { [50.0, -50.0] } else { [-50.0, 50.0] };
        self.samplers.iter_mut().for_each(|s| s.pin_logits(logits));
    }

    /// Draws a gate for every layer, sequentially in layer order.
    pub fn sample_gates<R: Rng + ?Sized>(
        &self,
        features: &[PooledGradFeature],
        rng: &mut R,
    ) -> Result<GateDecision> {
        let draws: Vec<[f64; 2]> = (0..self.samplers.len())
            .map(|_| [gumbel_draw(rng), gumbel_draw(rng)])
            .collect();
        self.gates_with_draws(features, &draws)
    }

    /// Gate decision for explicit Gumbel noise.
    pub fn gates_with_draws(
        &self,
        features: &[PooledGradFeature],
        draws: &[[f64; 2]],
    ) -> Result<GateDecision> {
        if features.len() != self.samplers.len() || draws.len() != self.samplers.len() {
            return Err(Error::dim(format!(
                "{} samplers, {} features, {} noise pairs",
                self.samplers.len(),
                features.len(),
                draws.len()
            )));
        }
        let gates = self
            .samplers
            .iter()
            .zip(features)
            .zip(draws)
            .map(|((s, f), d)| {
                if f.layer_index != s.layer_index {
                    return Err(Error::dim(format!(
                        "feature of layer {} given to sampler of layer {}",
                        f.layer_index, s.layer_index
                    )));
                }
                let logits = s.logits(&f.values)?;
                let g = gumbel_softmax_with_draws(logits, *d, self.temperature)?;
                Ok(LayerGate {
                    layer_index: s.layer_index,
                    soft: g.soft[0],
                    hard: g.index() == 0,
                    logits,
                    gumbel_draws: *d,
                    feature: f.values.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GateDecision {
            gates,
            tau: self.temperature,
        })
    }
}
