//! Shared fixtures for the benchmarks.

use fastslow::{AveragedTables, Discretization, FastSlowSystem, Preset};

pub const FOURIER: Discretization = Discretization::Fourier { modes: 128 };

pub fn doubling(epsilon: f64) -> FastSlowSystem {
    Preset::DoublingCos.build(epsilon).expect("preset is valid")
}

pub fn perturbed(epsilon: f64) -> FastSlowSystem {
    Preset::PerturbedDoubling.build(epsilon).expect("preset is valid")
}

pub fn tables(sys: &FastSlowSystem) -> AveragedTables {
    AveragedTables::build(sys, FOURIER).expect("tables build")
}
