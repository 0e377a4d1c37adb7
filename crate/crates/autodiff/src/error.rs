use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("glu needs an even channel count, got {0}")]
    OddChannels(usize),

    #[error("batch normalization group has a single element (shape {0:?})")]
    DegenerateBatch(Vec<usize>),

    #[error("graph is not topologically ordered at node {0}")]
    Cycle(usize),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
