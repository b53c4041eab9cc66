use thiserror::Error;

/// Crate-wide error type. Each variant maps to a stable category string so
/// the CLI can emit machine-readable failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty sample")]
    EmptySample,

    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("schema mismatch in {path}: missing columns {missing:?}")]
    SchemaMismatch { path: String, missing: Vec<String> },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable category label used in CLI error output and exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Singular(_) => "singular",
            Error::InsufficientData(_) => "insufficient-data",
            Error::EmptySample => "empty-sample",
            Error::InvalidConfig { .. } => "config",
            Error::InvalidArgument(_) => "argument",
            Error::Estimation(_) => "estimation",
            Error::SchemaMismatch { .. } => "schema",
            Error::EmptyInput(_) => "empty-input",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
