//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Build a [`Graph`], register parameters with [`Graph::param`] and inputs
//! with [`Graph::constant`], compose operations, then call
//! [`Graph::backward`] on a scalar loss.
//!
//! ```
//! use ssa_core::numcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::vector(vec![1.0, 2.0]));
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[2.0, 4.0]);
//! ```

mod graph;
mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
pub(crate) use tensor::matmul_nt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
