use std::fmt;

/// Process exit status by failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Other = 1,
    Config = 2,
    Data = 3,
    Provider = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(failure: Failure, error: impl Into<anyhow::Error>) -> Self {
        Self {
            failure,
            error: error.into(),
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Failure::Config, anyhow::anyhow!("{message}"))
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self::new(Failure::Data, anyhow::anyhow!("{message}"))
    }

    pub fn exit_code(&self) -> i32 {
        self.failure as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait ResultExt<T> {
    fn fail(self, failure: Failure, context: impl fmt::Display) -> CliResult<T>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn fail(self, failure: Failure, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(failure, e.into().context(context.to_string())))
    }
}
