use super::*;
use crate::datagen::{inject_symmetric_noise, make_blobs, split, SplitSpec};
use crate::error::Error;
use crate::metanet::MetaModel;
use crate::metrics::Stage;
use crate::nn::{Activation, Batch, LayeredNetwork};
use crate::verify::{masked_oracle, max_relative_error, naive_example_gradient};

const WIDTHS: [usize; 4] = [4, 6, 5, 3];

fn datasets(seed: u64) -> Datasets {
    let ds = make_blobs(3, 40, 4, 0.6, seed).unwrap();
    let spec = SplitSpec {
        train_n: 60,
        val_m: 15,
        test_n: 30,
        val_is_clean: true,
        stratified: true,
    };
    let mut s = split(&ds, &spec, seed).unwrap();
    s.train = inject_symmetric_noise(&s.train, 0.4, seed).unwrap();
    s
}

fn config() -> TrainConfig {
    TrainConfig {
        alpha: 0.1,
        beta: 0.05,
        batch_size: 6,
        val_batch_size: 5,
        iterations: 12,
        eval_every: 4,
        meta_hidden: 7,
        seed: 11,
        ..Default::default()
    }
}

fn run_with(strategy: GatingStrategy) -> TrainRun {
    TrainRun::from_widths(config(), strategy, &WIDTHS, Activation::Relu).unwrap()
}

fn batches(run: &mut TrainRun) -> (Batch, Batch) {
    run.sample_batches(&datasets(3)).unwrap()
}

fn naive_step(net: &LayeredNetwork, batch: &Batch, weights: &[f64], alpha: f64) -> Vec<f64> {
    let w = net.flatten();
    let n = batch.len();
    let mut out = w.clone();
    for i in 0..n {
        let g = naive_example_gradient(net, &w, batch.inputs.row(i), batch.labels[i]);
        for (o, gk) in out.iter_mut().zip(&g) {
            *o -= alpha * weights[i] * gk / n as f64;
        }
    }
    out
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    max_relative_error(a, b)
}

#[test]
fn zero_weights_leave_w_hat_at_w() {
    let mut run = run_with(GatingStrategy::AllLayers);
    run.meta = MetaModel::constant_logit(7, -800.0);
    let (train, _) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    assert_eq!(v.w_hat, run.net.flatten());
}

#[test]
fn unit_weights_give_plain_sgd() {
    let mut run = run_with(GatingStrategy::AllLayers);
    run.meta = MetaModel::constant_logit(7, 800.0);
    let (train, _) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    let g = crate::nn::batch_backward(&run.net, &train.inputs, &train.labels, &[1.0; 6]).unwrap();
    let sgd: Vec<f64> = run.net.flatten().iter().zip(&g).map(|(w, g)| w - 0.1 * g).collect();
    assert!(rel(&v.w_hat, &sgd) < 1e-12);
}

#[test]
fn constant_weight_scales_the_learning_rate() {
    let mut run = run_with(GatingStrategy::AllLayers);
    run.meta = MetaModel::constant_logit(7, 0.3);
    let c = crate::metanet::sigmoid(0.3);
    let (train, _) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    let g = crate::nn::batch_backward(&run.net, &train.inputs, &train.labels, &[1.0; 6]).unwrap();
    let w = run.net.flatten();
    let sgd: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w - 0.1 * c * g).collect();
    let dv: Vec<f64> = v.w_hat.iter().zip(&w).map(|(a, b)| a - b).collect();
    let ds: Vec<f64> = sgd.iter().zip(&w).map(|(a, b)| a - b).collect();
    assert!(rel(&v.w_hat, &sgd) < 1e-12);
    assert!(rel(&dv, &ds) < 1e-10);
}

#[test]
fn virtual_step_matches_naive_loops() {
    let mut run = run_with(GatingStrategy::AllLayers);
    let (train, _) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    let expected = naive_step(&run.net, &train, &v.weights, 0.1);
    assert!(rel(&v.w_hat, &expected) < 1e-12);
}

#[test]
fn all_layers_and_blocks_match_masked_oracle() {
    let l = WIDTHS.len() - 1;
    for (strategy, mask) in [
        (GatingStrategy::AllLayers, vec![true; l]),
        (GatingStrategy::PreSpecifiedBlock(1), vec![true, true, false]),
        (GatingStrategy::PreSpecifiedBlock(2), vec![false, false, true]),
    ] {
        let mut run = run_with(strategy);
        let (train, val) = batches(&mut run);
        let v = run.virtual_train_step(&train).unwrap();
        let step = run.compute_meta_step(&v, &val).unwrap();
        assert_eq!(step.mask, mask);
        let oracle = masked_oracle(&run.net, &run.meta, &train, &val, 0.1, &mask).unwrap();
        assert!(rel(&step.meta_gradient.total, &oracle) < 1e-12, "{strategy}");
        assert_eq!(step.grads.grad_theta, step.meta_gradient.total);
    }
}

#[test]
fn random_with_every_layer_is_all_layers() {
    let mut a = run_with(GatingStrategy::AllLayers);
    let mut r = run_with(GatingStrategy::RandomLayers(3));
    let (train, val) = batches(&mut a);
    let va = a.virtual_train_step(&train).unwrap();
    let vr = r.virtual_train_step(&train).unwrap();
    let sa = a.meta_train_step(&va, &val).unwrap();
    let sr = r.meta_train_step(&vr, &val).unwrap();
    assert_eq!(sa.meta_gradient.total, sr.meta_gradient.total);
    assert_eq!(a.meta.theta, r.meta.theta);
}

#[test]
fn actual_step_reuses_virtual_direction() {
    let mut run = run_with(GatingStrategy::AllLayers);
    run.meta = MetaModel::constant_logit(7, 800.0);
    let (train, _) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    run.actual_train_step(&v).unwrap();
    assert_eq!(run.net.flatten(), v.w_hat);

    run.meta = MetaModel::constant_logit(7, -800.0);
    let before = run.net.flatten();
    let v = run.virtual_train_step(&train).unwrap();
    run.actual_train_step(&v).unwrap();
    assert_eq!(run.net.flatten(), before);
}

#[test]
fn actual_step_matches_naive_loops_with_updated_theta() {
    let mut run = run_with(GatingStrategy::AllLayers);
    let (train, val) = batches(&mut run);
    let v = run.virtual_train_step(&train).unwrap();
    run.meta_train_step(&v, &val).unwrap();
    let weights = run.meta.weights(&v.grads.losses).unwrap();
    assert_ne!(weights, v.weights);
    let expected = naive_step(&run.net, &train, &weights, 0.1);
    let used = run.actual_train_step(&v).unwrap();
    assert_eq!(used, weights);
    assert!(rel(&run.net.flatten(), &expected) < 1e-12);
}

#[test]
fn stages_touch_only_their_parameters() {
    let mut run = run_with(GatingStrategy::Famus(2));
    let (train, val) = batches(&mut run);
    let w0 = run.net.flatten();
    let v = run.virtual_train_step(&train).unwrap();
    assert_eq!(run.net.flatten(), w0);
    let theta0 = run.meta.theta.clone();
    let eta0: Vec<Vec<f64>> = run.gates.as_ref().unwrap().samplers.iter().map(|s| s.eta.clone()).collect();
    run.meta_train_step(&v, &val).unwrap();
    assert_eq!(run.net.flatten(), w0);
    assert_ne!(run.meta.theta, theta0);
    let theta1 = run.meta.theta.clone();
    let eta1: Vec<Vec<f64>> = run.gates.as_ref().unwrap().samplers.iter().map(|s| s.eta.clone()).collect();
    assert_ne!(eta1, eta0);
    run.actual_train_step(&v).unwrap();
    assert_ne!(run.net.flatten(), w0);
    assert_eq!(run.meta.theta, theta1);
    let eta2: Vec<Vec<f64>> = run.gates.as_ref().unwrap().samplers.iter().map(|s| s.eta.clone()).collect();
    assert_eq!(eta2, eta1);
}

#[test]
fn gated_off_layers_skip_similarity() {
    let mut run = run_with(GatingStrategy::Famus(1));
    let ds = datasets(3);
    let mut expected = vec![0u64; 3];
    for _ in 0..15 {
        let (train, val) = run.sample_batches(&ds).unwrap();
        let v = run.virtual_train_step(&train).unwrap();
        let step = run.compute_meta_step(&v, &val).unwrap();
        for (p, &on) in step.mask.iter().enumerate() {
            expected[p] += on as u64;
        }
        assert_eq!(run.pairwise_calls(), expected.as_slice());
        let oracle = masked_oracle(&run.net, &run.meta, &train, &val, 0.1, &step.mask).unwrap();
        assert!(rel(&step.meta_gradient.total, &oracle) < 1e-12);
        run.apply_meta_step(&step).unwrap();
        run.actual_train_step(&v).unwrap();
    }
    assert!(expected.iter().sum::<u64>() < 45);
}

#[test]
fn zero_iterations_report_initial_evaluation() {
    let cfg = TrainConfig { iterations: 0, ..config() };
    let report = run_training(&cfg, GatingStrategy::AllLayers, &WIDTHS, Activation::Relu, &datasets(1)).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(report.log.evals.len(), 1);
    assert_eq!(report.log.evals[0].iteration, 0);
    assert!(report.log.timings.is_empty());
}

#[test]
fn evaluation_cadence_and_records() {
    let report = run_training(&config(), GatingStrategy::Famus(2), &WIDTHS, Activation::Relu, &datasets(1)).unwrap();
    let its: Vec<u64> = report.log.evals.iter().map(|e| e.iteration).collect();
    assert_eq!(its, vec![0, 4, 8, 12]);
    assert_eq!(report.log.histograms.len(), 4);
    for h in &report.log.histograms {
        assert_eq!(h.clean.iter().chain(&h.noisy).sum::<u64>(), 60);
    }
    assert_eq!(report.log.timings.len(), 36);
    assert_eq!(report.log.grad_stats.len(), 12);
    assert_eq!(report.log.gates.len(), 36);
    let mut stages = report.log.timings.iter().map(|t| t.stage);
    assert_eq!(stages.next(), Some(Stage::VirtualTrain));
    assert_eq!(stages.next(), Some(Stage::MetaTrain));
    assert_eq!(stages.next(), Some(Stage::ActualTrain));
}

#[test]
fn runs_are_reproducible() {
    for strategy in [GatingStrategy::Famus(2), GatingStrategy::RandomLayers(2), GatingStrategy::PlainSgd] {
        let a = run_training(&config(), strategy, &WIDTHS, Activation::Relu, &datasets(2)).unwrap();
        let b = run_training(&config(), strategy, &WIDTHS, Activation::Relu, &datasets(2)).unwrap();
        assert_eq!(a.log.without_timings(), b.log.without_timings());
        assert_eq!(a.net, b.net);
        assert_eq!(a.meta, b.meta);
    }
}

#[test]
fn pinned_gates_follow_all_layers() {
    let cfg = TrainConfig { lambda2: 0.0, ..config() };
    let ds = datasets(4);
    let mut all = TrainRun::from_widths(cfg.clone(), GatingStrategy::AllLayers, &WIDTHS, Activation::Relu).unwrap();
    let mut famus = TrainRun::from_widths(cfg, GatingStrategy::Famus(2), &WIDTHS, Activation::Relu).unwrap();
    famus.gates.as_mut().unwrap().pin(true);
    assert_eq!(all.meta.theta, famus.meta.theta);
    for _ in 0..10 {
        all.step(&ds).unwrap();
        famus.step(&ds).unwrap();
        assert_eq!(all.meta.theta, famus.meta.theta);
        assert_eq!(all.net, famus.net);
    }
}

#[test]
fn nan_names_the_stage() {
    let mut run = run_with(GatingStrategy::AllLayers);
    let (train, _) = batches(&mut run);
    run.net.layers_mut()[2].weight.data_mut()[0] = f64::NAN;
    match run.virtual_train_step(&train) {
        Err(Error::Numeric { stage, .. }) => assert_eq!(stage, "virtual_train"),
        other => panic!("expected a numeric error, got {other:?}"),
    }

    let mut run = run_with(GatingStrategy::AllLayers);
    run.config.alpha = 1e308;
    let (train, val) = batches(&mut run);
    let err = run
        .virtual_train_step(&train)
        .and_then(|v| run.meta_train_step(&v, &val).map(|_| ()));
    assert!(matches!(err, Err(Error::Numeric { .. })));
}

#[test]
fn plain_sgd_never_touches_theta() {
    let report = run_training(&config(), GatingStrategy::PlainSgd, &WIDTHS, Activation::Relu, &datasets(5)).unwrap();
    let fresh = run_with(GatingStrategy::PlainSgd);
    assert_eq!(report.meta, fresh.meta);
    assert!(report.log.histograms.is_empty());
    assert!(report.log.timings.iter().all(|t| t.stage == Stage::ActualTrain));
}

#[test]
fn strategy_outside_network_is_config_error() {
    let r = TrainRun::from_widths(config(), GatingStrategy::PreSpecifiedBlock(3), &WIDTHS, Activation::Relu);
    assert!(matches!(r, Err(Error::Config(_))));
    let r = TrainRun::from_widths(config(), GatingStrategy::Famus(4), &WIDTHS, Activation::Relu);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn random_layers_use_only_the_gumbel_stream() {
    let ds = datasets(6);
    let mut a = run_with(GatingStrategy::RandomLayers(1));
    let mut b = run_with(GatingStrategy::AllLayers);
    let (ta, va) = a.sample_batches(&ds).unwrap();
    let (tb, vb) = b.sample_batches(&ds).unwrap();
    assert_eq!(ta.labels, tb.labels);
    assert_eq!(va.labels, vb.labels);
}
