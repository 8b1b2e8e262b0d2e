use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid inputs, refused operations.
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<hmt_core::Error> for CliError {
    fn from(e: hmt_core::Error) -> Self {
        use hmt_core::Error as E;
        match e {
            E::Shape { .. }
            | E::InvalidShape { .. }
            | E::Contract(_)
            | E::OutOfRange { .. }
            | E::MissingGradient(_)
            | E::Diverged { .. } => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
