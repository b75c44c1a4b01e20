//! The Virtual-Train / Meta-Train / Actual-Train loop.

mod config;
mod run;
mod strategy;

pub use config::{LrDecay, TrainConfig};
pub use run::{run_training, Datasets, MetaGradientProbe, MetaStep, TrainReport, TrainRun, VirtualStep};
pub use strategy::{block_count, GatingStrategy};

#[cfg(test)]
mod tests;
