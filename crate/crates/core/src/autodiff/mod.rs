//! Minimal reverse-mode automatic differentiation over dense tensors.

mod conv;
mod gradcheck;
mod graph;
mod real;
mod tensor;

pub use conv::{conv2d_forward, ConvAlgorithm, ConvConfig, Padding};
pub use gradcheck::{grad_check, grad_check_with_fault, relative_error, GradCheckReport};
pub use graph::{BinaryOp, Graph, OpKind, Var};
pub use real::Real;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss has no path to any tensor that requires a gradient")]
    Detached,
    #[error("function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
}
