//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Supplies the primitives the forecaster is built from: batched matrix
//! products, stable softmax, layer normalization, ReLU, elementwise algebra,
//! per-time-slice graph contraction, and a tape-based backward pass over
//! named [`Parameter`]s. Values are `f32` for training speed or `f64` for
//! gradient-check fidelity via the [`Element`] type parameter.

mod check;
mod element;
mod param;
mod tensor;

pub use check::{finite_diff_check, CheckOutcome};
pub use element::Element;
pub use param::{ParamRegistry, Parameter};
pub use tensor::{contract_time_graph, no_grad, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: bad shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: input contains NaN")]
    NotANumber { op: &'static str },
    #[error("backward requires a scalar loss, got {elements} elements")]
    NonScalarLoss { elements: usize },
    #[error("parameter '{name}' registered twice")]
    DuplicateParameter { name: String },
}
