//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("shape {shape:?} does not describe a buffer of length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("operators need a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { shape: Vec<usize> },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("invalid axis {axis}")]
    InvalidAxis { axis: usize },
    #[error("column slice {start}..{} out of bounds for {cols} columns", start + len)]
    SliceOutOfBounds { start: usize, len: usize, cols: usize },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("graph already consumed by a backward pass")]
    GraphConsumed,
    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },
    #[error("optimizer state does not match the parameter list")]
    OptimizerLayout,
}
