use std::fmt;

use mpgen_model::ModelError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Malformed input with its location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line; one past the last line for truncated input.
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.field, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("unsupported format version {found} (this build reads major version {supported})")]
    Version { found: String, supported: u32 },
    /// Bad arguments or configuration; exits with status 2.
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] mpgen_core::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("image encoding: {0}")]
    Png(#[from] png::EncodingError),
    #[error("subject-count service: {0}")]
    Llm(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn in_file(self, path: &std::path::Path) -> Self {
        Self::File {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Core(mpgen_core::Error::ScaleViolation { .. }) => 2,
            Self::File { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
