//! Crate-wide error type. Every fallible public operation returns
//! [`Result`]; panics are reserved for internal logic bugs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (bad JSON, unknown enum tag, missing field).
    #[error("format error in {path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// Structurally valid input that violates a documented contract,
    /// e.g. an annotation span outside the document text.
    #[error("validation error: {0}")]
    Validation(String),

    /// Inconsistent or out-of-range configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Token sequence longer than the encoder window; callers should use
    /// the sliding-window entry point instead.
    #[error("sequence of {len} tokens exceeds encoder window {window}")]
    WindowOverflow { len: usize, window: usize },

    /// A requested statistic has an empty denominator.
    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for CLI error reports.
    #[must_use]
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::WindowOverflow { .. } => "window_overflow",
            Error::UndefinedRate(_) => "undefined_rate",
            Error::Divergence(_) => "divergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
