//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitives (affine maps, column slicing and
//! concatenation, leaky rectifier, tanh, sigmoid, elementwise arithmetic,
//! reductions) as they are evaluated. Vector-Jacobian products are a
//! first-class operation: [`Tape::vjp`] pulls a cotangent back in a single
//! reverse traversal, and [`Tape::vjp_graph`] records that traversal so the
//! products themselves can be differentiated (needed when a loss is built
//! from Jacobian probes).

mod check;
mod kernels;
mod tape;
mod tensor;

pub use check::{central_difference_jacobian, grad_check, jacobian_by_vjp};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} expects a 2-D operand, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("data length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("variable #{index} (tape {var_tape}) is not recorded on tape {tape}")]
    ForeignVar {
        index: usize,
        var_tape: u64,
        tape: u64,
    },

    #[error("cotangent shape {found:?} does not match output shape {expected:?}")]
    CotangentShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("gradient requested of non-scalar output with shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("non-finite value while differentiating coordinate {coordinate}")]
    NonFinite { coordinate: usize },
}
