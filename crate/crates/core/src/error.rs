use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("clip contains no samples")]
    EmptyClip,

    #[error("clip too short for analysis ({len} samples)")]
    ClipTooShort { len: usize },

    #[error("degenerate filterbank: {0}")]
    DegenerateBand(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("unsupported checkpoint: {0}")]
    VersionUnsupported(String),

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("fold {0} has no entries")]
    EmptyFold(usize),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("I/O failure on {path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
