//! Acceptance suite: every criterion at its stated tolerance and time budget.
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::time::{Duration, Instant};

use famus_core::datagen::{inject_symmetric_noise, longtail_count, make_blobs, make_longtail, BlobTask, SplitSpec};
use famus_core::famus::{gumbel_softmax_sample, loss_r, GateBank, PooledGradFeature};
use famus_core::metrics::Stage;
use famus_core::nn::{Batch, SgdMomentumState, Tensor};
use famus_core::rng::stream_raw;
use famus_core::verify::{fd_hypergradient, masked_oracle, max_relative_error, OracleConfig};
use famus_core::{Activation, Datasets, GatingStrategy, LayeredNetwork, MetaModel, TrainConfig, TrainRun};
use rand::seq::index;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, dim: usize, classes: usize) -> Batch {
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(Tensor::new(vec![n, dim], x).unwrap(), y).unwrap()
}

fn tiny_run(net: LayeredNetwork, meta: MetaModel, alpha: f64, n: usize, m: usize) -> TrainRun {
    let cfg = TrainConfig {
        alpha,
        batch_size: n,
        val_batch_size: m,
        meta_hidden: meta.hidden_width(),
        ..Default::default()
    };
    TrainRun::new(cfg, GatingStrategy::AllLayers, net, meta, None).unwrap()
}

fn hypergradient_exactness() -> Outcome {
    let cfg = OracleConfig::hypergradient();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..120u64 {
        let mut rng = stream_raw(seed, 100);
        let layers = rng.random_range(1..=3);
        let mut widths: Vec<usize> = (0..=layers).map(|_| rng.random_range(2..=8)).collect();
        widths[layers] = widths[layers].max(2);
        let mut net = LayeredNetwork::init(&widths, Activation::Relu, &mut rng).unwrap();
        for layer in net.layers_mut() {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        let meta = MetaModel::init(rng.random_range(4..=16), &mut rng);
        let classes = widths[layers];
        let train = random_batch(&mut rng, 2, widths[0], classes);
        let val = random_batch(&mut rng, 2, widths[0], classes);
        let alpha = rng.random_range(0.05..0.5);

        let mut run = tiny_run(net.clone(), meta.clone(), alpha, 2, 2);
        let v = run.virtual_train_step(&train).unwrap();
        let analytic = run.compute_meta_step(&v, &val).unwrap().meta_gradient.total;
        let fd = fd_hypergradient(&net, &meta, &train, &val, alpha, &cfg).unwrap();
        let err = max_relative_error(&analytic, &fd);
        worst = worst.max(err);
        if !(err < cfg.tolerance) {
            failures.push(seed);
        }
    }
    outcome(
        failures.is_empty(),
        format!("120 instances, max rel err {worst:.2e}, failing seeds {failures:?}"),
    )
}

fn gated_equivalence() -> Outcome {
    let widths = [5, 7, 6, 8, 4, 6, 3];
    let l = widths.len() - 1;
    let mut rng = stream_raw(7, 200);
    let net = LayeredNetwork::init(&widths, Activation::Relu, &mut rng).unwrap();
    let meta = MetaModel::init(12, &mut rng);
    let train = random_batch(&mut rng, 4, widths[0], 3);
    let val = random_batch(&mut rng, 3, widths[0], 3);

    let mut subsets: Vec<Vec<bool>> = (0..l).map(|p| (0..l).map(|q| q == p).collect()).collect();
    while subsets.len() < l + 20 {
        let size = rng.random_range(1..=l);
        let mut mask = vec![false; l];
        for p in index::sample(&mut rng, l, size) {
            mask[p] = true;
        }
        subsets.push(mask);
    }

    let mut worst: f64 = 0.0;
    let mut exact_sum = true;
    for mask in &subsets {
        let cfg = TrainConfig {
            alpha: 0.3,
            batch_size: 4,
            val_batch_size: 3,
            meta_hidden: 12,
            ..Default::default()
        };
        let run = TrainRun::new(cfg, GatingStrategy::AllLayers, net.clone(), meta.clone(), None).unwrap();
        let v = run.virtual_train_step(&train).unwrap();
        let w_hat = net.with_flat(&v.w_hat).unwrap();
        let val_grads =
            famus_core::nn::per_example_backward_masked(&w_hat, &val.inputs, &val.labels, &[1.0; 3], mask).unwrap();
        let mut sims = std::collections::BTreeMap::new();
        for (p, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
            sims.insert(p + 1, famus_core::famus::pairwise_g(&v.grads, &val_grads, p + 1).unwrap());
        }
        let mg =
            famus_core::famus::assemble_meta_gradient(&sims, &v.weight_grad_rows, Some(mask), 0.3, 4, 3).unwrap();
        let oracle = masked_oracle(&net, &meta, &train, &val, 0.3, mask).unwrap();
        worst = worst.max(max_relative_error(&mg.total, &oracle));

        let mut sum = vec![0.0; mg.total.len()];
        for (p, _) in mask.iter().enumerate().filter(|(_, &on)| on) {
            for (s, v) in sum.iter_mut().zip(&mg.per_layer[&(p + 1)]) {
                *s += v;
            }
        }
        exact_sum &= sum == mg.total;
    }
    outcome(
        worst < 1e-12 && exact_sum,
        format!(
            "{} subsets, max rel err vs masked oracle {worst:.2e}, per-layer sums exact: {exact_sum}",
            subsets.len()
        ),
    )
}

fn small_task(seed: u64) -> Datasets {
    BlobTask {
        classes: 4,
        per_class: 150,
        dim: 8,
        spread: 0.5,
        noise_rate: 0.4,
        imbalance_factor: None,
        split: SplitSpec {
            train_n: 400,
            val_m: 40,
            test_n: 150,
            val_is_clean: true,
            stratified: true,
        },
    }
    .build(seed)
    .unwrap()
}

fn reweighting_reduction() -> Outcome {
    let ds = small_task(5);
    let widths = [8, 16, 16, 16, 16, 4];
    let cfg = TrainConfig {
        lambda2: 0.0,
        batch_size: 20,
        val_batch_size: 20,
        alpha: 0.1,
        seed: 5,
        ..Default::default()
    };
    let mut all = TrainRun::from_widths(cfg.clone(), GatingStrategy::AllLayers, &widths, Activation::Relu).unwrap();
    let mut famus = TrainRun::from_widths(cfg, GatingStrategy::Famus(4), &widths, Activation::Relu).unwrap();
    famus.gates.as_mut().unwrap().pin(true);
    let mut first_divergence = None;
    for it in 0..200 {
        all.step(&ds).unwrap();
        famus.step(&ds).unwrap();
        if first_divergence.is_none() && all.meta.theta != famus.meta.theta {
            first_divergence = Some(it);
        }
    }
    outcome(
        first_divergence.is_none(),
        format!("200 iterations, first theta divergence at {first_divergence:?}"),
    )
}

fn speedup_trend() -> Outcome {
    let mut widths = vec![32];
    widths.extend([64; 15]);
    widths.push(10);
    let task = BlobTask {
        classes: 10,
        per_class: 200,
        dim: 32,
        spread: 0.4,
        noise_rate: 0.4,
        imbalance_factor: None,
        split: SplitSpec {
            train_n: 1500,
            val_m: 200,
            test_n: 300,
            val_is_clean: true,
            stratified: true,
        },
    };
    let ds = task.build(1).unwrap();
    let cfg = TrainConfig {
        iterations: 150,
        eval_every: 1000,
        seed: 1,
        alpha: 0.02,
        ..Default::default()
    };
    let all = famus_core::run_training(&cfg, GatingStrategy::AllLayers, &widths, Activation::Relu, &ds).unwrap();
    let famus = famus_core::run_training(&cfg, GatingStrategy::Famus(4), &widths, Activation::Relu, &ds).unwrap();
    let all_meta = all.log.mean_stage_ms(Stage::MetaTrain);
    let famus_meta = famus.log.mean_stage_ms(Stage::MetaTrain);
    let shares: Vec<f64> = Stage::ALL.iter().map(|&s| all.log.mean_stage_ms(s)).collect();
    let meta_largest = shares[1] >= shares[0] && shares[1] >= shares[2];
    let total: f64 = shares.iter().sum();
    let mean_active = famus.log.grad_stats.iter().map(|s| s.active_layers as f64).sum::<f64>()
        / famus.log.grad_stats.len() as f64;
    let speedup = all_meta / famus_meta;
    outcome(
        speedup >= 1.5 && meta_largest,
        format!(
            "16 layers: MetaTrain {all_meta:.1} ms (all) vs {famus_meta:.1} ms (famus, {mean_active:.2} active), \
             speedup {speedup:.2}x; MetaTrain share under all layers {:.0}%",
            100.0 * shares[1] / total
        ),
    )
}

fn std_per_coordinate(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    (0..dim)
        .map(|k| {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / n;
            (samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

fn variance_trend() -> Outcome {
    let ds = robustness_task().build(0).unwrap();
    let cfg = TrainConfig {
        iterations: 1500,
        seed: 0,
        ..Default::default()
    };
    let widths = robustness_widths();
    let mut run = TrainRun::from_widths(cfg, GatingStrategy::Famus(4), &widths, Activation::Relu).unwrap();
    for _ in 0..1500 {
        run.step(&ds).unwrap();
    }
    let (mut full, mut gated) = (Vec::new(), Vec::new());
    let mut active = 0usize;
    for _ in 0..200 {
        let (train, val) = run.sample_batches(&ds).unwrap();
        let probe = run.probe_meta_gradient(&train, &val).unwrap();
        active += probe.mask.iter().filter(|&&b| b).count();
        full.push(probe.full);
        gated.push(probe.gated);
    }
    let (sf, sg) = (std_per_coordinate(&full), std_per_coordinate(&gated));
    let live: Vec<usize> = (0..sf.len()).filter(|&k| !(sf[k] == 0.0 && sg[k] == 0.0)).collect();
    let lower = live.iter().filter(|&&k| sg[k] < sf[k]).count();
    let frac = lower as f64 / live.len().max(1) as f64;
    outcome(
        frac >= 0.70 && !live.is_empty(),
        format!(
            "gated std lower in {lower}/{} live coordinates ({:.1}%), {} constant coordinates skipped, mean active {:.2}",
            live.len(),
            100.0 * frac,
            sf.len() - live.len(),
            active as f64 / 200.0
        ),
    )
}

fn robustness_widths() -> Vec<usize> {
    vec![32, 32, 32, 32, 32, 10]
}

fn robustness_task() -> BlobTask {
    BlobTask {
        classes: 10,
        per_class: 451,
        dim: 32,
        spread: 0.4,
        noise_rate: 0.4,
        imbalance_factor: None,
        split: SplitSpec {
            train_n: 2000,
            val_m: 500,
            test_n: 2000,
            val_is_clean: true,
            stratified: true,
        },
    }
}

fn robustness_trend() -> Outcome {
    let widths = robustness_widths();
    let strategies = [GatingStrategy::PlainSgd, GatingStrategy::AllLayers, GatingStrategy::Famus(4)];
    let mut peaks = [[0.0; 3]; 3];
    for seed in 0..3u64 {
        let ds = robustness_task().build(seed).unwrap();
        let cfg = TrainConfig {
            iterations: 4000,
            seed,
            ..Default::default()
        };
        for (s, &strategy) in strategies.iter().enumerate() {
            let report = famus_core::run_training(&cfg, strategy, &widths, Activation::Relu, &ds).unwrap();
            peaks[s][seed as usize] = 100.0 * report.peak_accuracy().unwrap();
        }
    }
    let mean = |s: usize| peaks[s].iter().sum::<f64>() / 3.0;
    let (plain, all, famus) = (mean(0), mean(1), mean(2));
    outcome(
        all >= plain + 2.0 && (famus - all).abs() <= 2.0,
        format!(
            "mean peak accuracy: plain {plain:.2}, all layers {all:.2}, famus {famus:.2} (per seed {:?})",
            peaks.map(|p| p.map(|v| (v * 100.0).round() / 100.0))
        ),
    )
}

fn lr_efficacy() -> Outcome {
    let mut rng = stream_raw(3, 700);
    let widths: Vec<usize> = (0..12).map(|_| rng.random_range(4..=24)).collect();
    let mut bank = GateBank::init(&widths, 1.0, 4, &mut rng).unwrap();
    let features: Vec<PooledGradFeature> = widths
        .iter()
        .enumerate()
        .map(|(p, &d)| PooledGradFeature {
            layer_index: p + 1,
            values: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let mut opts: Vec<SgdMomentumState> =
        bank.samplers.iter().map(|s| SgdMomentumState::new(s.param_count(), 0.1, 0.9)).collect();
    let initial = bank.sample_gates(&features, &mut rng).unwrap().active_count();
    let mut tail = Vec::new();
    for step in 0..2000 {
        let decision = bank.sample_gates(&features, &mut rng).unwrap();
        let lr = loss_r(&bank, &decision, 4).unwrap();
        for ((s, opt), g) in bank.samplers.iter_mut().zip(&mut opts).zip(&lr.grad_eta) {
            let scaled: Vec<f64> = g.iter().map(|v| 0.1 * v).collect();
            opt.step(&mut s.eta, &scaled).unwrap();
        }
        if step >= 1800 {
            tail.push(decision.active_count() as f64);
        }
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    outcome(
        (mean - 4.0).abs() <= 1.0,
        format!("L = 12, K = 4: active count {initial} at start, mean {mean:.2} over the last 200 steps"),
    )
}

fn generator_laws() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let base = make_blobs(10, 1000, 4, 1.0, 9).unwrap();
    for p in [0.2, 0.4, 0.6] {
        let noisy = inject_symmetric_noise(&base, p, 17).unwrap();
        let changed = noisy.labels.iter().zip(&noisy.true_labels).filter(|(a, b)| a != b).count() as f64
            / noisy.len() as f64;
        let q = p * 9.0 / 10.0;
        let sigma = (q * (1.0 - q) / noisy.len() as f64).sqrt();
        let ok = (changed - q).abs() <= 3.0 * sigma;
        pass &= ok;
        notes.push(format!("p={p}: {changed:.4} vs {q:.3}±{:.4}", 3.0 * sigma));
    }
    let n = 500;
    let balanced = make_blobs(10, n, 4, 1.0, 2).unwrap();
    for f in [10.0f64, 20.0, 50.0, 100.0] {
        let lt = make_longtail(&balanced, f, 4).unwrap();
        let counts = lt.class_counts();
        let mu = f.powf(-1.0 / 9.0);
        let expected: Vec<usize> = (0..10).map(|i| (n as f64 * mu.powi(i)).round() as usize).collect();
        let ratio = counts[0] as f64 / counts[9] as f64;
        let ok = counts == expected
            && counts.iter().enumerate().all(|(i, &c)| c == longtail_count(n, mu, i))
            && (ratio - f).abs() <= f * 0.5 / counts[9] as f64 + 1e-9;
        pass &= ok;
        notes.push(format!("F={f}: ratio {ratio:.2}"));
    }
    outcome(pass, notes.join("; "))
}

fn gumbel_law() -> Outcome {
    let mut rng = stream_raw(21, 900);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let logits: [f64; 2] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let p0 = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
        let hits = (0..10_000)
            .filter(|_| gumbel_softmax_sample(logits, 1.0, &mut rng).unwrap().index() == 0)
            .count();
        worst = worst.max((hits as f64 / 10_000.0 - p0).abs());
    }
    outcome(worst <= 0.02, format!("10 logit pairs x 10000 draws, max |freq - p| = {worst:.4}"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("hypergradient exactness", Duration::from_secs(60), hypergradient_exactness),
        ("gated equivalence", Duration::from_secs(30), gated_equivalence),
        ("reweighting reduction", Duration::from_secs(600), reweighting_reduction),
        ("speedup trend", Duration::from_secs(600), speedup_trend),
        ("variance trend", Duration::from_secs(300), variance_trend),
        ("robustness trend", Duration::from_secs(1200), robustness_trend),
        ("active-count regulariser", Duration::from_secs(60), lr_efficacy),
        ("generator laws", Duration::from_secs(600), generator_laws),
        ("gumbel-softmax law", Duration::from_secs(5), gumbel_law),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id} {name}: {} ({}; {:.1}s of {}s budget{})",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
