use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }
}

impl From<orderedae::Error> for CliError {
    fn from(e: orderedae::Error) -> Self {
        use orderedae::Error as E;
        let msg = e.to_string();
        match e {
            E::Contract(_) => CliError::Usage(msg),
            E::DimensionMismatch(_)
            | E::DegenerateVariable { .. }
            | E::Parse { .. }
            | E::Io(_)
            | E::Json(_) => CliError::Data(msg),
            E::Numerical(_) | E::NoConvergence { .. } | E::NothingToExtract => {
                CliError::Numerical(msg)
            }
            E::TrivialSolution => CliError::Numerical(format!(
                "{msg}; rerun with --retry-normalized to retrain with the residual encoder rows held at unit norm"
            )),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
