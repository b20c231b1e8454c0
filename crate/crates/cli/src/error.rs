use thiserror::Error;

/// Failure classes of the command-line runner, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with `context` and keeps the class.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
        }
    }
}

impl From<ucad::Error> for CliError {
    fn from(e: ucad::Error) -> Self {
        use ucad::Error as E;
        match e {
            E::Param { .. } => CliError::Config(e.to_string()),
            E::Shape { .. } | E::Parse { .. } | E::Io(_) => CliError::Data(e.to_string()),
            E::NonFinite { .. } | E::Numeric(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
