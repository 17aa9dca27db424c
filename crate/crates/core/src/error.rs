use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Input errors and degenerate-geometry errors are kept apart so callers
/// (and the CLI exit codes) can tell malformed data from data that is well
/// formed but cannot support the requested estimate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimensions {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no valid Manhattan frame: {0}")]
    NoValidFrame(String),

    #[error("refinement diverged at epoch {epoch}, step {step}: total loss {loss} exceeds 10x the initial {initial}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        initial: f64,
    },

    #[error("format error in {format} at byte offset {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// True for errors caused by geometry that cannot support an estimate
    /// (as opposed to malformed input).
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::Degenerate(_) | Error::NoValidFrame(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
