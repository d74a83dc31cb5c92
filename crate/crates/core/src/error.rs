// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Errors raised by the CDP library.
#[derive(Debug, thiserror::Error)]
pub enum CdpError {
    #[error("dimension error: {context}: expected {expected:?}, got {actual:?}")]
    Dimension {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse {
        line: usize,
        message: String,
        /// Records successfully decoded before the failing line.
        recovered: usize,
    },

    #[error("schema error at line {line}: missing field `{field}`")]
    Schema { line: usize, field: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CdpError {
    pub(crate) fn dim(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        CdpError::Dimension {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class name, used for CLI exit reporting.
    pub fn class(&self) -> &'static str {
        match self {
            CdpError::Dimension { .. } => "dimension",
            CdpError::NonFinite(_) => "non_finite",
            CdpError::Config(_) => "config",
            CdpError::Usage(_) => "usage",
            CdpError::Parse { .. } => "parse",
            CdpError::Schema { .. } => "schema",
            CdpError::Checkpoint(_) => "checkpoint",
            CdpError::Io { .. } => "io",
            CdpError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, CdpError>;
