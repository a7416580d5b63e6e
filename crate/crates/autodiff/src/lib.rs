//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation applied to its values in creation
//! order. Calling [`Graph::backward`] on a scalar walks that record in
//! reverse once and accumulates gradients into the leaves created with
//! [`Graph::param`]. Graphs are cheap to build and are meant to be discarded
//! after each forward/backward pass; independent graphs can live on
//! different threads.

mod check;
mod graph;
mod kernels;
mod tensor;

pub use check::{grad_check, grad_check_coords};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
