//! Dense `f64` arrays, a define-by-run graph with reverse-mode gradients,
//! finite-difference checking, and Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod linear;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{logsumexp, sigmoid, softmax_in_place, Elementwise, Graph, Var};
pub use linear::Linear;
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::Tensor;
