//! Tensor arithmetic, reverse-mode gradients and the optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
