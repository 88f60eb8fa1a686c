//! Dense tensors, reverse-mode autodiff with double-backprop support, a
//! finite-difference gradient checker and the seeded random source.

mod backward;
pub mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckReport};
pub use graph::{Graph, Var, OP_NAMES};
pub use rng::{sample_category, sample_gaussian, sample_uniform01, Rng, Stream};
pub use tensor::Tensor;

use thiserror::Error;

/// Slope of every leaky-relu in the models.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid tensor shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: no inputs")]
    EmptyInput { op: &'static str },
    #[error("{op}: index out of range ({detail})")]
    OutOfRange { op: &'static str, detail: String },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("variable #{index} is not part of this graph")]
    ForeignVar { index: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid sampling range {lo}..={hi}")]
    EmptyRange { lo: usize, hi: usize },
}
