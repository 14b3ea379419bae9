use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pcadapt::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Usage(String),

    #[error("conformance check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 2 for configuration problems, 3 for protocol problems, 4 for a failed
    /// conformance check, 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        use pcadapt::Error as E;
        match self {
            CliError::Usage(_) | CliError::Json(_) | CliError::File { .. } => 2,
            CliError::Core(E::Config(_) | E::Json(_) | E::Parse { .. }) => 2,
            CliError::Core(E::Protocol(_) | E::RemoteFailure(_) | E::Timeout) => 3,
            CliError::CheckFailed(_) => 4,
            _ => 1,
        }
    }
}
