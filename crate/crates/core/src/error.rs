use std::path::PathBuf;

/// Errors produced by the pacing engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported estimation request: {0}")]
    Unsupported(String),

    #[error("instance too large for exact search ({0}); use the dual bound instead")]
    TooLarge(String),

    #[error("trace too short: {len} rounds available, window of {window} requested")]
    TraceTooShort { len: usize, window: usize },

    #[error("unknown metric `{metric}`; available columns: {available}")]
    UnknownMetric { metric: String, available: String },

    #[error("malformed summary file: {0}")]
    Summary(String),

    #[error("failed to parse scenario file {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input (bad config, bad flags) rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidDistribution(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::UnknownMetric { .. }
                | Error::TooLarge(_)
                | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
