use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Lib(#[from] elrecon::Error),

    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 config, 3 I/O or unreadable file, 4 numerical, 1 failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::VerifyFailed(_) => 1,
            CliError::Lib(e) if e.is_config() => 2,
            CliError::Lib(elrecon::Error::Io(_) | elrecon::Error::Format(_)) => 3,
            CliError::Lib(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}
