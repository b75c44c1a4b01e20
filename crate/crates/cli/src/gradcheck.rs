use famus_core::nn::{per_example_backward_masked, Batch, Tensor};
use famus_core::rng::stream_raw;
use famus_core::verify::{
    fd_first_order, fd_hypergradient, max_relative_error, naive_example_loss, offending_coordinates, OracleConfig,
};
use famus_core::{Activation, GatingStrategy, LayeredNetwork, MetaModel, TrainConfig, TrainRun};
use rand::Rng;

use crate::commands::load;
use crate::config::{
    ExperimentConfig, GradcheckSpec, GRADCHECK_MAX_BATCH, GRADCHECK_MAX_LAYERS, GRADCHECK_MAX_THETA, GRADCHECK_MAX_WIDTH,
};
use crate::{CliError, Common};

const GRADCHECK_STREAM: u64 = 40;

fn check_bounds(spec: &GradcheckSpec) -> Result<(), CliError> {
    let layers = spec.widths.len().saturating_sub(1);
    if !(1..=GRADCHECK_MAX_LAYERS).contains(&layers) {
        return Err(CliError::Config(format!(
            "gradcheck needs 1 to {GRADCHECK_MAX_LAYERS} layers, got {layers}"
        )));
    }
    if let Some(w) = spec.widths.iter().find(|&&w| w == 0 || w > GRADCHECK_MAX_WIDTH) {
        return Err(CliError::Config(format!("gradcheck width {w} outside [1, {GRADCHECK_MAX_WIDTH}]")));
    }
    let theta = famus_core::metanet::theta_len(spec.meta_hidden);
    if spec.meta_hidden == 0 || theta > GRADCHECK_MAX_THETA {
        return Err(CliError::Config(format!(
            "|theta| = {theta} exceeds the gradcheck bound {GRADCHECK_MAX_THETA}"
        )));
    }
    for (name, v) in [("n", spec.n), ("m", spec.m)] {
        if !(1..=GRADCHECK_MAX_BATCH).contains(&v) {
            return Err(CliError::Config(format!("gradcheck {name} = {v} outside [1, {GRADCHECK_MAX_BATCH}]")));
        }
    }
    if !(spec.alpha > 0.0) || !(spec.tolerance > 0.0) || spec.instances == 0 {
        return Err(CliError::Config("gradcheck alpha, tolerance and instances must be positive".into()));
    }
    Ok(())
}

fn batch<R: Rng>(rng: &mut R, n: usize, dim: usize, classes: usize) -> Batch {
    let x = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(Tensor::new(vec![n, dim], x).expect("shape"), y).expect("rows")
}

struct Check {
    name: &'static str,
    worst: f64,
    offending: Vec<(u64, Vec<usize>)>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            worst: 0.0,
            offending: Vec::new(),
        }
    }

    fn record(&mut self, instance: u64, analytic: &[f64], reference: &[f64], tol: f64) {
        let err = max_relative_error(analytic, reference);
        self.worst = self.worst.max(err);
        if !(err < tol) {
            self.offending.push((instance, offending_coordinates(analytic, reference, tol)));
        }
    }
}

pub fn run(common: &Common, sabotage: bool) -> Result<(), CliError> {
    let cfg = match common.config {
        Some(_) => load(common)?.0,
        None => ExperimentConfig::default().resolve(common.seed, None)?,
    };
    let spec = &cfg.gradcheck;
    check_bounds(spec)?;
    let l = spec.widths.len() - 1;
    let classes = spec.widths[l];
    let mut per_example = Check::new("per-example gradient");
    let mut meta = Check::new("meta gradient");
    for k in 0..spec.instances as u64 {
        let mut rng = stream_raw(cfg.seed.wrapping_add(k), GRADCHECK_STREAM);
        let mut net = LayeredNetwork::init(&spec.widths, Activation::Relu, &mut rng)?;
        // Non-zero biases keep pre-activations off the ReLU kink.
        for layer in net.layers_mut() {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        let model = MetaModel::init(spec.meta_hidden, &mut rng);
        let train = batch(&mut rng, spec.n, spec.widths[0], classes);
        let val = batch(&mut rng, spec.m, spec.widths[0], classes);

        let grads = per_example_backward_masked(&net, &train.inputs, &train.labels, &vec![1.0; spec.n], &vec![true; l])?;
        let w = net.flatten();
        for i in 0..spec.n {
            let analytic: Vec<f64> = (1..=l)
                .flat_map(|layer| {
                    let g = grads.layer(layer).expect("all layers computed");
                    g.example_weight(i).iter().chain(g.example_bias(i)).copied().collect::<Vec<_>>()
                })
                .collect();
            let x = train.inputs.row(i);
            let y = train.labels[i];
            let fd = fd_first_order(|p| naive_example_loss(&net, p, x, y), &w, &OracleConfig::first_order())?;
            per_example.record(k, &analytic, &fd, OracleConfig::first_order().tolerance);
        }

        let tc = TrainConfig {
            alpha: spec.alpha,
            batch_size: spec.n,
            val_batch_size: spec.m,
            meta_hidden: spec.meta_hidden,
            ..Default::default()
        };
        let mut run = TrainRun::new(tc, GatingStrategy::AllLayers, net.clone(), model.clone(), None)?;
        let v = run.virtual_train_step(&train)?;
        let mut analytic = run.compute_meta_step(&v, &val)?.meta_gradient.total;
        if sabotage {
            analytic.iter_mut().for_each(|g| *g *= 1.05);
        }
        let fd = fd_hypergradient(&net, &model, &train, &val, spec.alpha, &OracleConfig::hypergradient())?;
        meta.record(k, &analytic, &fd, spec.tolerance);
    }

    let mut failed = false;
    for c in [&per_example, &meta] {
        let ok = c.offending.is_empty();
        failed |= !ok;
        println!(
            "{:<22} max relative error {:.3e} over {} instances: {}",
            c.name,
            c.worst,
            spec.instances,
            if ok { "ok" } else { "FAILED" }
        );
        for (instance, coords) in &c.offending {
            println!("  instance {instance}: offending coordinates {coords:?}");
        }
    }
    if failed {
        Err(CliError::CheckFailed)
    } else {
        Ok(())
    }
}
