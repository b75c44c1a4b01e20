//! Meta-learned sample reweighting with layer-wise sampled meta gradients.
//!
//! A base classifier is trained on noisy labels while a small meta-model maps
//! each example's loss to a weight. The meta-model is fitted on clean
//! validation data through a one-step look-ahead, and per-layer gradient
//! samplers decide which layers contribute to its gradient.

mod error;

pub mod datagen;
pub mod famus;
pub mod metanet;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use famus::{GateBank, GateDecision, GradientSampler, MetaGradient};
pub use metanet::MetaModel;
pub use nn::{Activation, Batch, LayeredNetwork, Tensor};
pub use trainer::{run_training, Datasets, GatingStrategy, TrainConfig, TrainReport, TrainRun};
