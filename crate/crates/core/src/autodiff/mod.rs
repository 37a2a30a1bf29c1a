//! Tensor-level reverse-mode differentiation used by the model, the losses and
//! the completion solver.

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{ChamferTargets, Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
