use std::f64::consts::PI;
use std::str::FromStr;

use super::{evaluator, FastSlowSystem, SystemParts};
use crate::error::{Error, Result};

const TAU: f64 = 2.0 * PI;

/// Built-in systems.
///
/// * `doubling-cos`: `f = 2x`, `ω = cos 2πx + ½ sin 2πθ`.
/// * `perturbed-doubling`: `f = 2x + 0.1 sin 2π(x+θ)`, same `ω`.
/// * `coboundary-control`: `f = 2x`, `ω = g∘f − g` with `g = sin(2πx)/(2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    DoublingCos,
    PerturbedDoubling,
    CoboundaryControl,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::DoublingCos, Preset::PerturbedDoubling, Preset::CoboundaryControl];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DoublingCos => "doubling-cos",
            Preset::PerturbedDoubling => "perturbed-doubling",
            Preset::CoboundaryControl => "coboundary-control",
        }
    }

    pub fn parts(self) -> SystemParts {
        let drive_omega = evaluator(|x, t| (TAU * x).cos() + 0.5 * (TAU * t).sin());
        let drive_omega_x = evaluator(|x, _| -TAU * (TAU * x).sin());
        let drive_omega_t = evaluator(|_, t| PI * (TAU * t).cos());
        let zero = evaluator(|_, _| 0.0);
        match self {
            Preset::DoublingCos => SystemParts {
                name: self.name().into(),
                f: evaluator(|x, _| 2.0 * x),
                df_dx: evaluator(|_, _| 2.0),
                df_dtheta: zero.clone(),
                d2f_dx2: zero.clone(),
                d2f_dxdtheta: zero,
                omega: drive_omega,
                domega_dx: drive_omega_x,
                domega_dtheta: drive_omega_t,
                passive: Vec::new(),
            },
            Preset::PerturbedDoubling => SystemParts {
                name: self.name().into(),
                f: evaluator(|x, t| 2.0 * x + 0.1 * (TAU * (x + t)).sin()),
                df_dx: evaluator(|x, t| 2.0 + 0.1 * TAU * (TAU * (x + t)).cos()),
                df_dtheta: evaluator(|x, t| 0.1 * TAU * (TAU * (x + t)).cos()),
                d2f_dx2: evaluator(|x, t| -0.1 * TAU * TAU * (TAU * (x + t)).sin()),
                d2f_dxdtheta: evaluator(|x, t| -0.1 * TAU * TAU * (TAU * (x + t)).sin()),
                omega: drive_omega,
                domega_dx: drive_omega_x,
                domega_dtheta: drive_omega_t,
                passive: Vec::new(),
            },
            Preset::CoboundaryControl => SystemParts {
                name: self.name().into(),
                f: evaluator(|x, _| 2.0 * x),
                df_dx: evaluator(|_, _| 2.0),
                df_dtheta: zero.clone(),
                d2f_dx2: zero.clone(),
                d2f_dxdtheta: zero.clone(),
                omega: evaluator(|x, _| ((2.0 * TAU * x).sin() - (TAU * x).sin()) / TAU),
                domega_dx: evaluator(|x, _| 2.0 * (2.0 * TAU * x).cos() - (TAU * x).cos()),
                domega_dtheta: zero,
                passive: Vec::new(),
            },
        }
    }

    pub fn build(self, epsilon: f64) -> Result<FastSlowSystem> {
        FastSlowSystem::new(self.parts(), epsilon)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidSystem(format!("unknown preset `{s}`")))
    }
}
