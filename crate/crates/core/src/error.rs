use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("non-finite value from `{field}` at x={x}, theta={theta}")]
    NumericDomain { field: String, x: f64, theta: f64 },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),

    #[error("cone violation at step {k}: |u|={value} exceeds {bound}")]
    ConeViolation { k: usize, value: f64, bound: f64 },

    #[error("degenerate orbit at step {k}: trajectory within 1e-14 of a partition boundary")]
    DegenerateOrbit { k: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("spectral gap failure: {0}")]
    SpectralGap(String),

    #[error("degenerate variance: Sigma^2 = {0:e} is below 1e-8")]
    DegenerateVariance(f64),

    #[error("decomposition degenerate: |nu_j| = {0:e}")]
    DecompositionDegenerate(f64),

    #[error("resource cap exceeded: {0}")]
    Resource(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("interface mismatch: {0}")]
    Interface(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
