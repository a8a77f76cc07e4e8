use std::net::SocketAddr;

/// Failures surfaced to the shell, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("augmentation: {0}")]
    Augment(String),
    #[error("feature extraction: {0}")]
    Extract(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("prediction: {0}")]
    Predict(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_AUGMENT: i32 = 1;
pub const EXIT_EXTRACT: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_PREDICT: i32 = 4;
pub const EXIT_BIND: i32 = 5;
/// BSD `EX_USAGE`.
pub const EXIT_USAGE: i32 = 64;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILED,
            CliError::Augment(_) => EXIT_AUGMENT,
            CliError::Extract(_) => EXIT_EXTRACT,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Predict(_) => EXIT_PREDICT,
            CliError::Bind { .. } => EXIT_BIND,
        }
    }
}
