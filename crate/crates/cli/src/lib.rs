//! Command-line front end: configuration, expressions and subcommands.

pub mod commands;
pub mod config;
pub mod expr;
pub mod output;

pub use commands::{run, Command, RunOutcome};
pub use config::RunConfig;

/// Failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("resource cap: {0}")]
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Resource(_) => 4,
        }
    }
}

impl From<fastslow::Error> for CliError {
    fn from(e: fastslow::Error) -> Self {
        use fastslow::Error as E;
        let msg = e.to_string();
        match e {
            E::Resource(inner) => CliError::Resource(inner),
            E::InvalidSystem(_)
            | E::InvalidMap(_)
            | E::InvalidSpec(_)
            | E::Precondition(_)
            | E::InvalidDensity(_)
            | E::Interface(_) => CliError::Config(msg),
            E::NumericDomain { .. }
            | E::ConeViolation { .. }
            | E::DegenerateOrbit { .. }
            | E::SpectralGap(_)
            | E::DegenerateVariance(_)
            | E::DecompositionDegenerate(_)
            | E::NonConvergence(_) => CliError::Numeric(msg),
        }
    }
}
