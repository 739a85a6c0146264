//! Numerical laboratory for fast-slow skew products
//! `F_ε(x, θ) = (f(x, θ) mod 1, θ + ε ω(x, θ))` with an expanding fast map.
//!
//! Modules:
//! * [`system`]: systems, trajectories, slope recursions and shadowing.
//! * [`transfer`]: discretized weighted transfer operators and their spectra.
//! * [`statistics`]: averaged dynamics, Green–Kubo variances, LLT variance.
//! * [`ldp`]: rate functions, stationary multipliers, path functionals.
//! * [`standardpairs`]: standard pairs and their weighted pushforwards.
//! * [`montecarlo`]: ensembles and empirical probes.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ldp;
pub mod montecarlo;
pub mod numerics;
pub mod rng;
pub mod standardpairs;
pub mod statistics;
pub mod system;
pub mod transfer;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use ldp::{PathSpec, RateTable, RateValue};
pub use montecarlo::{LltReport, PathEnsemble};
pub use standardpairs::{StandardFamily, StandardPair};
pub use statistics::{AveragedPath, AveragedTables, VarianceProfile};
pub use system::{FastSlowSystem, Preset, ShadowReport, TrajectoryState};
pub use transfer::{Discretization, EigenData, OperatorSpec, Potential, TransferOperator};
