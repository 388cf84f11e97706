//! Dense tensors and a reverse-mode differentiation tape.
//!
//! Every model computation is recorded on a [`Tape`]; [`Tape::backward`]
//! walks it in reverse and leaves gradients for parameters and any leaf
//! created with `requires_grad`. Broadcasting is limited to equal shapes and
//! single-element operands.

mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{ElementwiseOp, ReduceOp, Tape, Var};
pub use tensor::{Precision, Real, Tensor};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("cannot reshape {from:?} into {to:?}")]
    ReshapeMismatch { from: Vec<usize>, to: Vec<usize> },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("axis {axis} out of range for a {ndim}-d tensor")]
    InvalidAxis { axis: usize, ndim: usize },
    #[error("index {index} out of range (bound {bound})")]
    OutOfRange { index: usize, bound: usize },
    #[error("expected a matrix, got shape {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("operation takes {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
