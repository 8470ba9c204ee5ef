use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] acppo::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 config error, 3 numerical abort (including a transfer run that
    /// never settles into a cycle), 4 I/O error.
    pub fn exit_code(&self) -> u8 {
        use acppo::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 4,
            Self::Core(e) => match e {
                E::NumericalAbort(_) | E::NoDominantFrequency => 3,
                E::Io(_) | E::Csv(_) | E::Parse { .. } | E::Checkpoint(_) => 4,
                _ => 2,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Core(e.into())
    }
}
