use famus_core::datagen::{BlobTask, SplitSpec};
use famus_core::metrics::{read_dir, summarize, write_dir, write_summary_json};
use famus_core::{run_training, Activation, GatingStrategy, TrainConfig};

fn task() -> BlobTask {
    BlobTask {
        classes: 3,
        per_class: 60,
        dim: 6,
        spread: 0.6,
        noise_rate: 0.4,
        imbalance_factor: Some(4.0),
        split: SplitSpec {
            train_n: 60,
            val_m: 15,
            test_n: 25,
            val_is_clean: true,
            stratified: false,
        },
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        iterations: 30,
        eval_every: 10,
        batch_size: 16,
        val_batch_size: 8,
        meta_hidden: 12,
        k: 2,
        seed: 4,
        ..Default::default()
    }
}

#[test]
fn every_strategy_trains_and_logs_round_trip() {
    let ds = task().build(4).unwrap();
    let widths = [6, 10, 10, 10, 3];
    let dir = tempfile::tempdir().unwrap();
    for strategy in ["all_layers", "block:2", "random:2", "famus:2", "plain_sgd"] {
        let strategy: GatingStrategy = strategy.parse().unwrap();
        let report = run_training(&config(), strategy, &widths, Activation::Relu, &ds).unwrap();
        assert_eq!(report.iterations, 30);
        assert_eq!(report.log.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), [0, 10, 20, 30]);
        assert_eq!(report.log.histograms.is_empty(), !strategy.uses_meta_model());

        let sub = dir.path().join(strategy.to_string().replace(':', "_"));
        write_dir(&report.log, &sub).unwrap();
        assert_eq!(read_dir(&sub).unwrap(), report.log);
    }
}

#[test]
fn summary_reports_speedup_against_all_layers() {
    let ds = task().build(1).unwrap();
    let widths = [6, 10, 10, 10, 3];
    let all = run_training(&config(), GatingStrategy::AllLayers, &widths, Activation::Relu, &ds).unwrap();
    let famus = run_training(&config(), GatingStrategy::Famus(2), &widths, Activation::Relu, &ds).unwrap();
    let summary = summarize(&famus.log, Some(&all.log), "abc");
    assert!(summary.speedup.is_some_and(|s| s > 0.0));
    assert_eq!(summary.peak_accuracy, famus.peak_accuracy());

    let path = tempfile::tempdir().unwrap().path().join("summary.json");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_summary_json(&summary, &path).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["config_digest", "mean_grad_std", "peak_accuracy", "speedup", "stage_time_ms"]);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let ds = task().build(2).unwrap();
    let widths = [6, 10, 10, 3];
    let a = run_training(&config(), GatingStrategy::Famus(2), &widths, Activation::Relu, &ds).unwrap();
    let b = run_training(&config(), GatingStrategy::Famus(2), &widths, Activation::Relu, &ds).unwrap();
    assert_eq!(a.log.without_timings(), b.log.without_timings());
    assert_eq!(a.net, b.net);
}
