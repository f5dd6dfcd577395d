use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported cost family: {0}")]
    UnsupportedFamily(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty function list")]
    EmptyFunctions,

    #[error("degenerate average {x_bar:e} for device {device}, resource {resource} at step {step}")]
    DegenerateAverage {
        device: usize,
        resource: usize,
        step: u64,
        x_bar: f64,
    },

    #[error("step {requested} is beyond the event log (last step {last})")]
    StepOutOfRange { requested: u64, last: u64 },

    #[error("cost function is not separable; use the projected-gradient solver")]
    NonSeparable,

    #[error("could not bracket the multiplier for resource {resource}")]
    BracketExpansion { resource: usize },

    #[error("invalid configuration:\n{0}")]
    Config(ValidationErrors),

    #[error("failed to parse configuration: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for CLI exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Parse(_) => ErrorCategory::Validation,
            Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Run,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Run,
    Io,
}

/// One offending field in a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationErrors(pub Vec<FieldError>);

impl ValidationErrors {
    pub fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|e| e.path.as_str())
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {}: {}", e.path, e.message)?;
        }
        Ok(())
    }
}
