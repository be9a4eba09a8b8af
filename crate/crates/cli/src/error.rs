use std::fmt;

use nca_core::data::DataError;
use nca_core::metrics::MetricsError;
use nca_core::nca::NcaError;
use nca_core::training::TrainError;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    CheckFailed = 1,
    Usage = 2,
    Diverged = 3,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or invalid configuration, missing inputs.
    Usage(String),
    /// A verification did not pass.
    Check(String),
    /// Training produced non-finite values; a dump was written.
    Diverged(String),
    /// Anything else that stops the command.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Check(_) | CliError::Failed(_) => ExitCode::CheckFailed,
            CliError::Diverged(_) => ExitCode::Diverged,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Diverged(m) => write!(f, "diverged: {m}"),
            CliError::Failed(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config { .. } | DataError::Io { .. } | DataError::Format(_) => CliError::Usage(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<NcaError> for CliError {
    fn from(e: NcaError) -> Self {
        match e {
            NcaError::Diverged { .. } => CliError::Diverged(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Nca(n) => n.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged(_) => CliError::Diverged(e.to_string()),
            TrainError::Data(m) => CliError::Usage(m),
            TrainError::Nca(n) => n.into(),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}
