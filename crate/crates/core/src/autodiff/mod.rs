//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
mod params;
mod spline_node;
mod tensor;

pub use graph::{CustomOp, Graph, Var};
pub use params::{ParamId, ParamStore, Tape};
pub use spline_node::{spline_batch, spline_node};
pub use tensor::Tensor;
