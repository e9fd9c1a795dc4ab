use std::path::PathBuf;

/// Failures surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] edpm_core::Error),

    #[error("{failed} of {total} replications failed (at most 20% may fail); first error: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: edpm_core::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical breakdown, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 2,
            CliError::Core(e) | CliError::TooManyFailures { first: e, .. } if e.is_numerical() => 3,
            CliError::Core(
                edpm_core::Error::Config(_)
                | edpm_core::Error::BudgetInfeasible(_)
                | edpm_core::Error::Dimension(_)
                | edpm_core::Error::InvalidStick(_)
                | edpm_core::Error::EmptyInput,
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
