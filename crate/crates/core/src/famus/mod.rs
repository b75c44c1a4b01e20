//! Layer-wise meta gradients, per-layer gradient samplers with Gumbel-softmax
//! gates, and the auxiliary objectives that train the samplers.

mod assemble;
mod gumbel;
mod objective;
mod pairwise;
mod pool;
mod sampler;

pub use assemble::{assemble_meta_gradient, MetaGradient};
pub use gumbel::{gumbel_draw, gumbel_softmax_sample, gumbel_softmax_with_draws, GumbelSample};
pub use objective::{loss_g, loss_g_value, loss_r, meta_objective_grads, LossG, LossR, MetaObjectiveGrads};
pub use pairwise::pairwise_g;
pub use pool::{avg_pool, pool_examples, PooledGradFeature};
pub use sampler::{GateBank, GateDecision, GradientSampler, LayerGate, SAMPLER_HIDDEN};
