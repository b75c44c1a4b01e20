//! Dense tensors, feedforward networks with per-example gradients, and SGD.

mod backward;
mod loss;
mod network;
mod optim;
mod tensor;

pub use backward::{
    batch_backward, per_example_backward, per_example_backward_masked, LayerGradBatch,
    PerExampleGrads,
};
pub use loss::{
    cross_entropy_indices, cross_entropy_per_example, labels_from_one_hot, log_sum_exp, one_hot,
    softmax_into,
};
pub use network::{Activation, ForwardCache, LayerParams, LayeredNetwork};
pub use optim::{sgd_momentum_step, SgdMomentumState};
pub use tensor::{dot, Tensor};

/// Inputs and integer labels of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> crate::Result<Self> {
        if inputs.rank() != 2 || inputs.rows() != labels.len() {
            return Err(crate::Error::Dimension(format!(
                "batch of {} labels with inputs {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
