use thiserror::Error;
use vclab_autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum VclabError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain index {index} out of range for {count} domains")]
    DomainOutOfRange { index: usize, count: usize },
    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(String),
    #[error("dimension {q} has zero variance")]
    DegenerateStats { q: usize },
    #[error("not enough voiced frames ({found}, need at least 2)")]
    TooFewVoicedFrames { found: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl VclabError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        VclabError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            VclabError::NonFiniteLoss(_)
                | VclabError::Autodiff(AutodiffError::NonFinite(_) | AutodiffError::NonFiniteGradient(_))
        )
    }
}

pub type Result<T, E = VclabError> = std::result::Result<T, E>;
