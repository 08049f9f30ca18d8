//! A compact reverse-mode automatic differentiation engine over `f64`
//! matrices, with the transformer pieces needed for sequence VAEs.
//!
//! All numeric kernels are row-local with a fixed reduction order. A causal
//! transformer evaluated on a whole sequence through [`Graph`] and the same
//! transformer stepped row by row through [`layers::Transformer::step`]
//! produce bit-identical outputs.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{Gradients, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { node: usize, op: &'static str },
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}
