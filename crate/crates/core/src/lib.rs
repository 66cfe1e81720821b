//! Infrared/visible image fusion: dual convolutional encoders, a modality
//! attention mask, a per-pixel alpha head, and a target-aware training loss.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod synthgen;
pub mod gradcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};
