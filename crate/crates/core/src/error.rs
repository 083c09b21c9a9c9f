use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Each variant maps onto a stable process exit code through
/// [`Error::exit_code`]: verification failures are `1`, everything a user can
/// fix by editing inputs is `2`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {what} (expected {expected}, found {found})")]
    Format {
        what: String,
        expected: String,
        found: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("growth cap reached: {current} + {step} layers exceeds target {target}")]
    GrowthCap {
        current: usize,
        step: usize,
        target: usize,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(
        what: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Format {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for failed verification, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 1,
            _ => 2,
        }
    }
}
