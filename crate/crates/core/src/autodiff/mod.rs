//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute. Each recorded
//! node stores its forward value and an adjoint closure; [`Tape::backward`]
//! replays the adjoints in reverse recording order.
//!
//! ```
//! use ringflow::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckFailure, GradCheckReport};
pub use ops::{elu, sigmoid, CsrMatrix};
pub use tape::{BackwardArgs, BackwardFn, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("data of length {len} does not fit shape {shape:?}")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward needs a single-element root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
}
