use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] optomech::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("configuration header: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("configuration header: {0}")]
    ConfigWrite(#[from] toml::ser::Error),

    #[error("{0}")]
    Usage(String),

    /// Every point of a run failed.
    #[error("no point could be computed: {0}")]
    TotalFailure(String),

    /// Checks ran but at least one failed.
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    /// 1 for a run that produced nothing, 2 for rejected input or failed checks.
    pub fn exit_code(&self) -> i32 {
        use optomech::Error as E;
        match self {
            CliError::Usage(_) | CliError::Validation(_) | CliError::ConfigParse(_) => 2,
            CliError::Model(
                E::InvalidParams(_)
                | E::StrongDrive { .. }
                | E::InvalidDimension { .. }
                | E::InvalidGrid(_)
                | E::UnknownMode(_)
                | E::ThermalCutoff { .. },
            ) => 2,
            _ => 1,
        }
    }
}

impl CliError {
    /// Flag that would have let the run proceed.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Model(optomech::Error::StrongDrive { .. }) => {
                Some("rerun with --allow-strong-drive to proceed anyway")
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
