use oscloc_powersim::SimError;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config, or input files. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// Numerical failure or aborted computation. Exit code 3.
    #[error("{0}")]
    Abort(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Abort(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl From<oscloc_core::Error> for CliError {
    fn from(e: oscloc_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Abort(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Core(inner) => inner.into(),
            SimError::Numerical(_) | SimError::PowerFlowDiverged { .. } | SimError::Unstable { .. } => {
                CliError::Abort(e.to_string())
            }
            // Generation aborts after too many rejected draws count as a
            // configuration problem.
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
