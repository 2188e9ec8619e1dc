use thiserror::Error;

pub type Result<T> = std::result::Result<T, RezeError>;

#[derive(Debug, Error)]
pub enum RezeError {
    #[error("empty sample set")]
    EmptySampleSet,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("mismatched {field} between inputs")]
    Mismatch { field: &'static str },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("eigenvalue {0:e} is negative beyond tolerance; input is not a covariance")]
    NegativeEigenvalue(f64),

    #[error("degenerate covariance")]
    DegenerateCovariance,

    #[error("degenerate point set")]
    DegeneratePointSet,

    #[error("degenerate relation vector at row {0}")]
    DegenerateRelation(usize),

    #[error("source {0} has no samples")]
    EmptySource(String),

    #[error("unknown source id {id} (have {sources} sources)")]
    UnknownSource { id: usize, sources: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RezeError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        RezeError::InvalidConfig(msg.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        RezeError::Format {
            offset,
            message: message.into(),
        }
    }

    /// True for errors that stem from files rather than from values.
    pub fn is_io(&self) -> bool {
        matches!(self, RezeError::Io(_) | RezeError::Format { .. })
    }
}
