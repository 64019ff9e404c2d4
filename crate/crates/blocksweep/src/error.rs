use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline stages.
///
/// Per-item failures (a repo that 404s, a unit that will not compile) are
/// recorded in manifests, not raised as errors; `Error` is reserved for
/// conditions that stop a stage outright.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("harness generation failed: {0}")]
    Harness(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
