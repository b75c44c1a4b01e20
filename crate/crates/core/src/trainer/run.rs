use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;

use super::config::TrainConfig;
use super::strategy::GatingStrategy;
use crate::datagen::{LabeledDataset, Splits};
use crate::error::{ensure_finite, Error, Result};
use crate::famus::{
    assemble_meta_gradient, avg_pool, loss_g, loss_r, meta_objective_grads, pairwise_g, pool_examples, GateBank,
    GateDecision, LossG, LossR, MetaGradient, MetaObjectiveGrads, PooledGradFeature,
};
use crate::metanet::MetaModel;
use crate::metrics::{EvalRecord, MetricLog, Recorder, Stage, WeightHistogram};
use crate::nn::{
    batch_backward, cross_entropy_indices, per_example_backward_masked, Activation, Batch, LayeredNetwork,
    PerExampleGrads, SgdMomentumState, Tensor,
};
use crate::rng::{stream, Stream, StreamRng};

/// Train, validation and test sets of one experiment.
pub type Datasets = Splits;

/// Everything Virtual-Train hands to the two later stages of an iteration.
#[derive(Debug, Clone)]
pub struct VirtualStep {
    pub batch: Batch,
    /// Unweighted per-example gradients at `w`.
    pub grads: PerExampleGrads,
    /// `V_i(theta)` for the batch.
    pub weights: Vec<f64>,
    /// `(n, |theta|)`, row `i` the gradient of `V_i` w.r.t. `theta`.
    pub weight_grad_rows: Tensor,
    pub w_hat: Vec<f64>,
    pub alpha: f64,
}

/// The meta gradient of one iteration and everything it was built from.
#[derive(Debug, Clone)]
pub struct MetaStep {
    /// Layers whose similarity was computed.
    pub mask: Vec<bool>,
    pub meta_gradient: MetaGradient,
    pub decision: Option<GateDecision>,
    pub loss_g: Option<LossG>,
    pub loss_r: Option<LossR>,
    pub grads: MetaObjectiveGrads,
}

/// Full and gated meta gradients computed at frozen parameters.
#[derive(Debug, Clone)]
pub struct MetaGradientProbe {
    pub full: Vec<f64>,
    pub gated: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Outcome of [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub strategy: GatingStrategy,
    pub log: MetricLog,
    pub net: LayeredNetwork,
    pub meta: MetaModel,
    pub gates: Option<GateBank>,
    pub iterations: u64,
    /// Similarity computations per layer (0-based position).
    pub pairwise_calls: Vec<u64>,
}

impl TrainReport {
    pub fn peak_accuracy(&self) -> Option<f64> {
        self.log.peak_accuracy()
    }
}

fn staged<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric { stage: inner, detail } => Error::Numeric {
            stage: stage.to_string(),
            detail: format!("{inner}: {detail}"),
        },
        other => other,
    })
}

fn nanos(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

/// State of the three-stage loop.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub strategy: GatingStrategy,
    pub net: LayeredNetwork,
    pub meta: MetaModel,
    pub gates: Option<GateBank>,
    base_opt: SgdMomentumState,
    meta_opt: SgdMomentumState,
    sampler_opts: Vec<SgdMomentumState>,
    data_rng: StreamRng,
    gumbel_rng: StreamRng,
    iteration: u64,
    pairwise_calls: Vec<u64>,
    recorder: Recorder,
}

impl TrainRun {
    pub fn new(
        config: TrainConfig,
        strategy: GatingStrategy,
        net: LayeredNetwork,
        meta: MetaModel,
        gates: Option<GateBank>,
    ) -> Result<Self> {
        config.validate()?;
        let l = net.num_layers();
        strategy.validate(l)?;
        match (&strategy, &gates) {
            (GatingStrategy::Famus(k), Some(bank)) => {
                if bank.num_layers() != l {
                    return Err(Error::config(format!("{} samplers for {l} layers", bank.num_layers())));
                }
                if bank.expected_active != *k {
                    return Err(Error::config("sampler bank and strategy disagree on K"));
                }
            }
            (GatingStrategy::Famus(_), None) => {
                return Err(Error::config("the famus strategy needs a sampler bank"));
            }
            _ => {}
        }
        let sampler_opts = gates
            .iter()
            .flat_map(|b| b.samplers.iter())
            .map(|s| SgdMomentumState::new(s.param_count(), config.sampler_lr, config.sampler_momentum))
            .collect();
        Ok(TrainRun {
            base_opt: SgdMomentumState::new(net.param_count(), config.alpha, config.base_momentum),
            meta_opt: SgdMomentumState::new(meta.param_count(), config.beta, config.meta_momentum),
            sampler_opts,
            data_rng: stream(config.seed, Stream::Data),
            gumbel_rng: stream(config.seed, Stream::Gumbel),
            iteration: 0,
            pairwise_calls: vec![0; l],
            recorder: Recorder::new(config.grad_window),
            config,
            strategy,
            net,
            meta,
            gates,
        })
    }

    /// Initialises the base net, meta-model and (for Famus) samplers, in that
    /// order, from the init stream of `config.seed`.
    pub fn from_widths(
        config: TrainConfig,
        strategy: GatingStrategy,
        widths: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let mut rng = stream(config.seed, Stream::Init);
        let net = LayeredNetwork::init(widths, activation, &mut rng)?;
        let meta = MetaModel::init(config.meta_hidden, &mut rng);
        let gates = match strategy {
            GatingStrategy::Famus(k) => {
                strategy.validate(net.num_layers())?;
                Some(GateBank::init(&widths[1..], config.tau, k, &mut rng)?)
            }
            _ => None,
        };
        TrainRun::new(config, strategy, net, meta, gates)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn pairwise_calls(&self) -> &[u64] {
        &self.pairwise_calls
    }

    pub fn log(&self) -> &MetricLog {
        &self.recorder.log
    }

    fn check_datasets(&self, ds: &Datasets) -> Result<()> {
        for (name, set) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
            set.validate()?;
            if set.dim() != self.net.input_dim() || set.num_classes != self.net.num_classes() {
                return Err(Error::config(format!(
                    "{name} set has dimension {} and {} classes; the network expects {} and {}",
                    set.dim(),
                    set.num_classes,
                    self.net.input_dim(),
                    self.net.num_classes()
                )));
            }
        }
        if ds.train.len() < self.config.batch_size {
            return Err(Error::config("training set smaller than the batch size"));
        }
        if self.strategy.uses_meta_model() && ds.val.len() < self.config.val_batch_size {
            return Err(Error::config("validation set smaller than the validation batch size"));
        }
        Ok(())
    }

    /// Draws this iteration's training and validation mini-batches.
    pub fn sample_batches(&mut self, ds: &Datasets) -> Result<(Batch, Batch)> {
        let train_idx = index::sample(&mut self.data_rng, ds.train.len(), self.config.batch_size).into_vec();
        let val_idx = index::sample(&mut self.data_rng, ds.val.len(), self.config.val_batch_size).into_vec();
        let (x, y) = ds.train.batch(&train_idx);
        let (vx, vy) = ds.val.batch(&val_idx);
        Ok((Batch::new(x, y)?, Batch::new(vx, vy)?))
    }

    /// `w_hat = w - alpha/n * sum_i V_i(theta) grad L_i(w)`; `w` is untouched.
    pub fn virtual_train_step(&self, batch: &Batch) -> Result<VirtualStep> {
        staged(Stage::VirtualTrain, self.virtual_inner(batch))
    }

    fn virtual_inner(&self, batch: &Batch) -> Result<VirtualStep> {
        let n = batch.len();
        let mask = vec![true; self.net.num_layers()];
        let grads = per_example_backward_masked(&self.net, &batch.inputs, &batch.labels, &vec![1.0; n], &mask)?;
        ensure_finite("training losses", &grads.losses)?;
        let (weights, weight_grad_rows) = if self.strategy.uses_meta_model() {
            (self.meta.weights(&grads.losses)?, self.meta.weight_grad_theta(&grads.losses)?)
        } else {
            (vec![1.0; n], Tensor::zeros(vec![n, 0]))
        };
        let alpha = self.config.alpha_at(self.iteration);
        let step = grads.weighted_mean_flat(&weights)?;
        let w_hat: Vec<f64> = self.net.flatten().iter().zip(&step).map(|(w, g)| w - alpha * g).collect();
        ensure_finite("virtual parameters", &w_hat)?;
        Ok(VirtualStep {
            batch: batch.clone(),
            grads,
            weights,
            weight_grad_rows,
            w_hat,
            alpha,
        })
    }

    fn layer_features(&self, cache: &VirtualStep) -> Result<Vec<PooledGradFeature>> {
        (1..=self.net.num_layers())
            .map(|l| {
                let (w, b) = cache.grads.layer(l)?.weighted_mean(&cache.weights);
                avg_pool(l, &w, &b)
            })
            .collect()
    }

    /// Builds the meta gradient for this iteration's active layers without
    /// touching `theta` or `eta`.
    pub fn compute_meta_step(&mut self, cache: &VirtualStep, val: &Batch) -> Result<MetaStep> {
        let r = self.compute_meta_inner(cache, val);
        staged(Stage::MetaTrain, r)
    }

    fn compute_meta_inner(&mut self, cache: &VirtualStep, val: &Batch) -> Result<MetaStep> {
        if !self.strategy.uses_meta_model() {
            return Err(Error::config("plain SGD has no meta step"));
        }
        let l_count = self.net.num_layers();
        let (mask, famus) = match (&self.strategy, &self.gates) {
            (GatingStrategy::Famus(_), Some(bank)) => {
                let features = self.layer_features(cache)?;
                let decision = bank.sample_gates(&features, &mut self.gumbel_rng)?;
                (decision.hard_mask(), Some((decision, features)))
            }
            (strategy, _) => {
                let mask = strategy
                    .fixed_mask(l_count, &mut self.gumbel_rng)
                    .ok_or_else(|| Error::config(format!("strategy {strategy} has no layer mask")))?;
                (mask, None)
            }
        };
        let want_lg = famus.is_some() && self.config.lambda2 != 0.0;
        let mut val_mask = mask.clone();
        if want_lg {
            val_mask[l_count - 1] = true;
        }
        let m = val.len();
        let w_hat_net = self.net.with_flat(&cache.w_hat)?;
        let val_grads = per_example_backward_masked(&w_hat_net, &val.inputs, &val.labels, &vec![1.0; m], &val_mask)?;
        ensure_finite("validation losses", &val_grads.losses)?;

        let mut similarity = BTreeMap::new();
        for (p, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
            similarity.insert(p + 1, pairwise_g(&cache.grads, &val_grads, p + 1)?);
            self.pairwise_calls[p] += 1;
        }
        let meta_gradient = assemble_meta_gradient(
            &similarity,
            &cache.weight_grad_rows,
            Some(&mask),
            cache.alpha,
            cache.batch.len(),
            m,
        )?;

        let (decision, lg, lr) = match famus {
            Some((decision, features)) => {
                let bank = self.gates.as_ref().expect("famus runs carry a sampler bank");
                let lg = if want_lg {
                    let top = val_grads.layer(l_count)?;
                    let (w, b) = top.weighted_mean(&vec![1.0; m]);
                    let val_feature = avg_pool(l_count, &w, &b)?;
                    let pooled = pool_examples(cache.grads.layer(l_count)?);
                    Some(loss_g(&features[l_count - 1], &val_feature, &pooled, &cache.weight_grad_rows)?)
                } else {
                    None
                };
                let lr = loss_r(bank, &decision, bank.expected_active)?;
                (Some(decision), lg, Some(lr))
            }
            None => (None, None, None),
        };
        let grads = meta_objective_grads(&meta_gradient, lg.as_ref(), lr.as_ref(), self.config.lambda1, self.config.lambda2)?;
        ensure_finite("meta gradient", &grads.grad_theta)?;
        for g in &grads.grad_eta {
            ensure_finite("sampler gradient", g)?;
        }
        Ok(MetaStep {
            mask,
            meta_gradient,
            decision,
            loss_g: lg,
            loss_r: lr,
            grads,
        })
    }

    /// One joint momentum step on `theta` and, for Famus, every `eta_l`.
    pub fn apply_meta_step(&mut self, step: &MetaStep) -> Result<()> {
        self.meta_opt.step(&mut self.meta.theta, &step.grads.grad_theta)?;
        if let Some(bank) = self.gates.as_mut() {
            if step.grads.grad_eta.len() == bank.num_layers() {
                for ((s, opt), g) in bank.samplers.iter_mut().zip(&mut self.sampler_opts).zip(&step.grads.grad_eta) {
                    opt.step(&mut s.eta, g)?;
                }
            }
        }
        staged(Stage::MetaTrain, ensure_finite("meta-model parameters", &self.meta.theta))
    }

    pub fn meta_train_step(&mut self, cache: &VirtualStep, val: &Batch) -> Result<MetaStep> {
        let step = self.compute_meta_step(cache, val)?;
        self.apply_meta_step(&step)?;
        Ok(step)
    }

    /// `w <- w - alpha/n * sum_i V_i(theta') grad L_i(w)` on the cached batch
    /// gradients. Returns the weights used.
    pub fn actual_train_step(&mut self, cache: &VirtualStep) -> Result<Vec<f64>> {
        staged(Stage::ActualTrain, self.actual_inner(cache))
    }

    fn actual_inner(&mut self, cache: &VirtualStep) -> Result<Vec<f64>> {
        let weights = if self.strategy.uses_meta_model() {
            self.meta.weights(&cache.grads.losses)?
        } else {
            vec![1.0; cache.batch.len()]
        };
        let grad = cache.grads.weighted_mean_flat(&weights)?;
        self.commit(&grad, cache.alpha)?;
        Ok(weights)
    }

    fn commit(&mut self, grad: &[f64], alpha: f64) -> Result<()> {
        let mut w = self.net.flatten();
        self.base_opt.learning_rate = alpha;
        self.base_opt.step(&mut w, grad)?;
        ensure_finite("base parameters", &w)?;
        self.net.set_flat(&w)
    }

    /// Unweighted SGD step on the batch.
    pub fn plain_step(&mut self, batch: &Batch) -> Result<()> {
        let r = batch_backward(&self.net, &batch.inputs, &batch.labels, &vec![1.0; batch.len()])
            .and_then(|g| {
                ensure_finite("batch gradient", &g)?;
                let alpha = self.config.alpha_at(self.iteration);
                self.commit(&g, alpha)
            });
        staged(Stage::ActualTrain, r)
    }

    /// One full iteration with timing and metric records.
    pub fn step(&mut self, ds: &Datasets) -> Result<()> {
        let (train, val) = self.sample_batches(ds)?;
        let it = self.iteration;
        if !self.strategy.uses_meta_model() {
            let t = Instant::now();
            self.plain_step(&train)?;
            self.recorder.log.record_timing(it, Stage::ActualTrain, nanos(t))?;
            self.iteration += 1;
            return Ok(());
        }
        let t = Instant::now();
        let cache = self.virtual_train_step(&train)?;
        self.recorder.log.record_timing(it, Stage::VirtualTrain, nanos(t))?;

        let t = Instant::now();
        let meta_step = self.meta_train_step(&cache, &val)?;
        self.recorder.log.record_timing(it, Stage::MetaTrain, nanos(t))?;

        let t = Instant::now();
        self.actual_train_step(&cache)?;
        self.recorder.log.record_timing(it, Stage::ActualTrain, nanos(t))?;

        self.recorder
            .record_meta_grad(it, &meta_step.meta_gradient.total, meta_step.meta_gradient.active_count())?;
        let gates: Vec<(usize, f64, bool)> = match &meta_step.decision {
            Some(d) => d.gates.iter().map(|g| (g.layer_index, g.soft, g.hard)).collect(),
            None => meta_step
                .mask
                .iter()
                .enumerate()
                .map(|(p, &on)| (p + 1, if on { 1.0 } else { 0.0 }, on))
                .collect(),
        };
        self.recorder.log.record_gates(it, &gates)?;
        self.iteration += 1;
        Ok(())
    }

    fn mean_loss(&self, set: &LabeledDataset) -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::NAN);
        }
        let logits = self.net.forward(&set.features)?;
        let losses = cross_entropy_indices(&logits, &set.labels)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    pub fn evaluate(&self, ds: &Datasets) -> Result<EvalRecord> {
        Ok(EvalRecord {
            iteration: self.iteration,
            train_loss: self.mean_loss(&ds.train)?,
            val_loss: self.mean_loss(&ds.val)?,
            test_loss: self.mean_loss(&ds.test)?,
            test_accuracy: self.net.accuracy(&ds.test.features, &ds.test.labels)?,
        })
    }

    /// Evaluates, and for meta-model runs also histograms the training-set weights.
    pub fn record_evaluation(&mut self, ds: &Datasets) -> Result<EvalRecord> {
        let record = self.evaluate(ds)?;
        self.recorder.log.record_eval(record)?;
        if self.strategy.uses_meta_model() {
            let logits = self.net.forward(&ds.train.features)?;
            let losses = cross_entropy_indices(&logits, &ds.train.labels)?;
            let weights = self.meta.weights(&losses)?;
            let hist = WeightHistogram::from_weights(self.iteration, &weights, &ds.train.flags, self.config.histogram_bins)?;
            self.recorder.log.record_histogram(hist)?;
        }
        Ok(record)
    }

    /// Full and gated meta gradients at the current parameters. Nothing but the
    /// gumbel stream advances.
    pub fn probe_meta_gradient(&mut self, train: &Batch, val: &Batch) -> Result<MetaGradientProbe> {
        let cache = self.virtual_train_step(train)?;
        let l_count = self.net.num_layers();
        let mask = match (&self.strategy, &self.gates) {
            (GatingStrategy::Famus(_), Some(bank)) => {
                let features = self.layer_features(&cache)?;
                bank.sample_gates(&features, &mut self.gumbel_rng)?.hard_mask()
            }
            (strategy, _) => strategy
                .fixed_mask(l_count, &mut self.gumbel_rng)
                .ok_or_else(|| Error::config(format!("strategy {strategy} has no layer mask")))?,
        };
        let m = val.len();
        let w_hat_net = self.net.with_flat(&cache.w_hat)?;
        let val_grads =
            per_example_backward_masked(&w_hat_net, &val.inputs, &val.labels, &vec![1.0; m], &vec![true; l_count])?;
        let mut similarity = BTreeMap::new();
        for l in 1..=l_count {
            similarity.insert(l, pairwise_g(&cache.grads, &val_grads, l)?);
        }
        let n = train.len();
        let full = assemble_meta_gradient(&similarity, &cache.weight_grad_rows, None, cache.alpha, n, m)?;
        let gated = assemble_meta_gradient(&similarity, &cache.weight_grad_rows, Some(&mask), cache.alpha, n, m)?;
        Ok(MetaGradientProbe {
            full: full.total,
            gated: gated.total,
            mask,
        })
    }

    pub fn into_report(self) -> TrainReport {
        TrainReport {
            strategy: self.strategy,
            log: self.recorder.into_log(),
            net: self.net,
            meta: self.meta,
            gates: self.gates,
            iterations: self.iteration,
            pairwise_calls: self.pairwise_calls,
        }
    }

    /// Runs `config.iterations` iterations, evaluating at iteration 0, every
    /// `eval_every` iterations and at the end.
    pub fn run(mut self, ds: &Datasets) -> Result<TrainReport> {
        self.check_datasets(ds)?;
        self.record_evaluation(ds)?;
        let total = self.config.iterations;
        while self.iteration < total {
            self.step(ds)?;
            if self.iteration % self.config.eval_every == 0 || self.iteration == total {
                self.record_evaluation(ds)?;
            }
        }
        Ok(self.into_report())
    }
}

/// Builds a run from `widths` and trains it on `ds`.
pub fn run_training(
    config: &TrainConfig,
    strategy: GatingStrategy,
    widths: &[usize],
    activation: Activation,
    ds: &Datasets,
) -> Result<TrainReport> {
    TrainRun::from_widths(config.clone(), strategy, widths, activation)?.run(ds)
}
