//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Everything is stored row-major. Operations treat tensors as matrices
//! (vectors are a single row); the one rank-3 consumer is
//! [`Graph::bilinear`]. Broadcasting is limited to [`Graph::add_bias`] and
//! scalar affine maps.

mod dense;
mod gradcheck;
mod graph;
mod params;
mod scalar;

pub use dense::Tensor;
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{GradStore, ParamId, ParamStore};
pub use scalar::{Precision, Scalar};


#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: String, left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    Numeric { op: String },
    #[error("{0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dims(op: &str, left: &[usize], right: &[usize]) -> Self {
        TensorError::Dimension { op: op.to_string(), left: left.to_vec(), right: right.to_vec() }
    }
}

#[cfg(test)]
mod tests;
