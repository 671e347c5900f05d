use thiserror::Error;

/// Errors produced by the library. Variants are coarse on purpose: the CLI maps
/// them onto exit codes and the FFI layer onto status codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("series too short: need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model schema mismatch: expected {expected:#018x}, got {got:#018x}")]
    SchemaMismatch { expected: u64, got: u64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable short identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooShort { .. } => "too_short",
            Error::Parse { .. } => "parse",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::Diverged { .. } => "diverged",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
