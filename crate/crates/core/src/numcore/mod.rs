//! Dense and sparse linear algebra, a recording tape for reverse-mode
//! gradients, and the Adam optimizer.

mod adam;
mod sparse;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, TapeNode, Var, COSINE_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("malformed sparse matrix: {0}")]
    Structural(String),
    #[error("cosine similarity: {side} row {row} has (near-)zero norm")]
    DegenerateRow { side: &'static str, row: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
}
