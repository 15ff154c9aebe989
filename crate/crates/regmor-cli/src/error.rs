use thiserror::Error;

/// Failures split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or files (exit 2).
    #[error("{0}")]
    Input(String),
    /// Numerical breakdown during a stage (exit 3).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefixes the message with the stage that failed.
    pub fn at(self, stage: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{stage}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{stage}: {m}")),
        }
    }
}

impl From<regmor::Error> for CliError {
    fn from(e: regmor::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}
