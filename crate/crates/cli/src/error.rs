use std::fmt;

use storage_arb::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Solver,
    Estimator,
}

/// A failure tagged with the stage that raised it.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &'static str, kind: Kind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn data(stage: &'static str, message: impl fmt::Display) -> Self {
        Self::new(stage, Kind::Data, message)
    }

    pub fn config(stage: &'static str, e: ConfigError) -> Self {
        Self::new(stage, Kind::Config, e)
    }

    /// Process exit status.
    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Solver => 4,
            Kind::Estimator => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Config => "config error",
            Kind::Data => "data error",
            Kind::Solver => "solver did not converge",
            Kind::Estimator => "estimator did not converge",
        };
        write!(f, "{} stage: {kind}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

/// Shorthand for attaching a stage to I/O and parse failures.
pub trait Context<T> {
    fn data(self, stage: &'static str) -> Result<T>;
}

impl<T, E: fmt::Display> Context<T> for std::result::Result<T, E> {
    fn data(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CliError::data(stage, e))
    }
}
