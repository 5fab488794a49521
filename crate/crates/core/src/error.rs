use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the pipeline.
///
/// Messages are prefixed with the module that produced them so the CLI can
/// print them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("ingest: {0}")]
    Ingest(String),

    #[error("roi: {0}")]
    Roi(#[from] crate::roi::RoiRejection),

    #[error("featex: {0}")]
    Featex(String),

    #[error("cnn: {0}")]
    Cnn(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("synth: {0}")]
    Synth(String),

    #[error("format: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values or divergence rather
    /// than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
