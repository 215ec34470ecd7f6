use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("composite index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("path count mismatch: expected L'={expected}, found {found}")]
    PathCountMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingFailure { epoch: usize, loss: f64 },

    #[error("localization failed: {0}")]
    LocalizationFailure(String),

    #[error("model format version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed model payload: {0}")]
    ModelFormat(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no data: {0}")]
    NoData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
