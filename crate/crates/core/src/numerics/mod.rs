//! Dense double-precision tensors and a reverse-mode gradient tape.
//!
//! Everything the summarizer computes is expressed through the small operation
//! catalog on [`Tape`]: matmul, elementwise add/mul (with scalar and row
//! broadcasting), concat, slice, reshape, embedding row gather, rank-1 pick and
//! scatter-add, softmax, the [`UnaryKind`] nonlinearities, sum and constant
//! scaling.
//!
//! A tape is single-threaded. Independent tapes share nothing and may be run
//! on different threads.

mod gradcheck;
mod probes;
mod tape;
mod tensor;

pub use gradcheck::{central_differences, grad_check, grad_check_many, max_relative_error};
pub use probes::{op_probes, OpProbe};
pub use tape::{Gradients, Tape, UnaryKind, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {message}")]
    Dimension { op: &'static str, message: String },
    #[error("{op}: value {value} at index {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op} produced a non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("finite-difference step {0} outside [1e-7, 1e-4]")]
    StepSize(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
