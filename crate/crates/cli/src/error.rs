use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error(transparent)]
    Core(#[from] uplift_core::Error),
}

impl CliError {
    /// 0 success, 2 usage or configuration, 3 data or validation, 4 numeric or fit.
    pub fn exit_code(&self) -> u8 {
        use uplift_core::Error as E;
        match self {
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_) | CliError::Usage(_) => 2,
            CliError::Model(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                e if e.is_numeric() => 4,
                _ => 3,
            },
        }
    }

    pub fn report(&self) -> ExitCode {
        match self {
            CliError::Clap(e) => {
                let _ = e.print();
            }
            other => eprintln!("error: {other}"),
        }
        ExitCode::from(self.exit_code())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
