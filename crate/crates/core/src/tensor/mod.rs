//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod conv;
mod graph;
mod real;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
#[allow(unused_imports)]
pub(crate) use graph::soft_bin;
pub use graph::{
    Activation, Elementwise, Gradients, Graph, Reduction, Var, UNIT_RANGE_SLACK, XLOGX_FLOOR,
};
pub use real::Real;
pub use tensor::Tensor;
