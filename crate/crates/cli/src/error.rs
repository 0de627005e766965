use std::path::PathBuf;

/// Failure of one command; each variant maps to a fixed process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric overflow: {0} (pass --allow-inf to accept infinite bounds)")]
    Overflow(String),

    #[error("soundness violation: {0}")]
    Soundness(String),

    #[error("descent inequality violated: {0}")]
    Descent(String),

    #[error("CODE/network equivalence failed: {0}")]
    Equivalence(String),

    #[error("refusing to overwrite {} (pass --force)", .0.display())]
    Overwrite(PathBuf),

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Overflow(_) => 3,
            CliError::Soundness(_) => 4,
            CliError::Descent(_) => 5,
            CliError::Equivalence(_) => 6,
            CliError::Overwrite(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<lipcert_core::Error> for CliError {
    fn from(e: lipcert_core::Error) -> Self {
        match e {
            lipcert_core::Error::NonFinite(_) => CliError::Overflow(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::CliError::Config(format!($($arg)*))
    };
}

pub(crate) use config_err;
