//! Crate-wide error type.
//!
//! Three broad classes map onto the CLI's exit codes: configuration errors
//! (exit 2), data/ingestion errors (exit 3), and I/O failures (treated as
//! data errors at the CLI boundary). A sweep with per-cell failures exits 4;
//! that state is represented in the results store, not here.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad cluster counts, over-trimming, unknown
    /// transform descriptors, malformed config files, and the like.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or insufficient data: label out of range, empty shard,
    /// image/label count mismatch, missing dataset files.
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure while reading or writing an artifact.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The process exit code this error class maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
        }
    }
}
