//! Errors of the command-line layer and their JSON rendering.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A malformed or invalid input record. `line` is the 1-based line in the
    /// file, the header being line 1.
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Config { path: PathBuf, line: Option<u64>, message: String },
    #[error("invalid option: {0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Compute {
        stage: &'static str,
        #[source]
        source: stumpage_core::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn record(path: &Path, line: u64, message: impl Into<String>) -> Self {
        CliError::Record { path: path.to_path_buf(), line, message: message.into() }
    }

    pub fn config(path: &Path, message: impl Into<String>) -> Self {
        CliError::Config { path: path.to_path_buf(), line: None, message: message.into() }
    }

    pub fn compute(stage: &'static str) -> impl FnOnce(stumpage_core::Error) -> Self {
        move |source| CliError::Compute { stage, source }
    }

    pub fn report(&self) -> ErrorReport {
        let file = |p: &Path| Some(p.display().to_string());
        match self {
            CliError::Io { path, source } => {
                ErrorReport { kind: "io", message: source.to_string(), file: file(path), line: None }
            }
            CliError::Record { path, line, message } => {
                ErrorReport { kind: "data", message: message.clone(), file: file(path), line: Some(*line) }
            }
            CliError::Config { path, line, message } => {
                ErrorReport { kind: "config", message: message.clone(), file: file(path), line: *line }
            }
            CliError::Usage(m) => ErrorReport { kind: "usage", message: m.clone(), file: None, line: None },
            CliError::Compute { .. } => {
                ErrorReport { kind: "compute", message: self.to_string(), file: None, line: None }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.report() }).to_string()
    }
}
