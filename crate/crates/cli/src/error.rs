use std::fmt;

/// A failure attributed to the module and operation that raised it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub module: &'static str,
    pub operation: String,
    pub cause: String,
}

impl CliError {
    pub fn new(module: &'static str, operation: impl Into<String>, cause: impl fmt::Display) -> Self {
        CliError { module, operation: operation.into(), cause: cause.to_string() }
    }

    /// Multi-line report for stderr.
    pub fn report(&self) -> String {
        format!("error\n  module: {}\n  operation: {}\n  cause: {}", self.module, self.operation, self.cause)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.module, self.operation, self.cause)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    fn ctx(self, module: &'static str, operation: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: fmt::Display> Context<T> for std::result::Result<T, E> {
    fn ctx(self, module: &'static str, operation: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::new(module, operation(), e))
    }
}
