//! Shared fixtures for the benchmarks.

use famus_core::datagen::{BlobTask, SplitSpec};
use famus_core::{Activation, Datasets, GatingStrategy, Result, TrainConfig, TrainRun};

/// Input width 32, `depth` hidden layers of `hidden` units, 10 classes.
pub fn deep_widths(depth: usize, hidden: usize) -> Vec<usize> {
    let mut widths = vec![32];
    widths.extend(std::iter::repeat_n(hidden, depth));
    widths.push(10);
    widths
}

pub fn blob_task(seed: u64) -> Result<Datasets> {
    BlobTask {
        classes: 10,
        per_class: 100,
        dim: 32,
        spread: 0.4,
        noise_rate: 0.4,
        imbalance_factor: None,
        split: SplitSpec {
            train_n: 600,
            val_m: 200,
            test_n: 200,
            val_is_clean: true,
            stratified: true,
        },
    }
    .build(seed)
}

pub fn bench_run(strategy: GatingStrategy, widths: &[usize], batch: usize) -> Result<TrainRun> {
    let cfg = TrainConfig {
        batch_size: batch,
        val_batch_size: batch,
        seed: 3,
        ..Default::default()
    };
    TrainRun::from_widths(cfg, strategy, widths, Activation::Relu)
}
