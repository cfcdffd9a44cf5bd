use thiserror::Error;

/// Errors raised by graph construction, solving, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid neighbor count k={k} for {n} nodes (need 1 <= k < n)")]
    InvalidK { k: usize, n: usize },

    #[error("zero-norm vector at row {row} cannot be used with cosine distance")]
    DegenerateVector { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("instance of size {n} exceeds the exact-enumeration bound {max}")]
    TooLarge { n: usize, max: usize },

    #[error("graphs have different node counts ({left} vs {right})")]
    SizeMismatch { left: usize, right: usize },

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("noise scale must be positive, got {0}")]
    InvalidScale(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("synthetic data generation failed: {0}")]
    Generation(String),

    #[error("training diverged at epoch {epoch}: parameters became non-finite")]
    TrainingDiverged { epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::Shape(_)
                | Error::NonFinite(_)
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::DegenerateVector { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
