//! Shadowing of true orbits by orbits of frozen or averaged fast dynamics.
//!
//! Both reconstructions run backwards from the true endpoint `x_n`, inverting
//! one fiber map per step along the integer itinerary of the true orbit. Each
//! inverse branch is a contraction, so bisection is unconditionally safe.

use super::{simulate, FastSlowSystem, FiberMap, TrajectoryState};
use crate::error::{Error, Result};
use crate::numerics::circle_diff;
use crate::statistics::{averaged_orbit, AveragedTables};

/// Distance of an orbit point to a partition boundary treated as degenerate.
const BOUNDARY_TOL: f64 = 1e-14;

/// Admissible region `|θ₀ − θ*|·n + ε·n² ≤ c_sharp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowConfig {
    pub c_sharp: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { c_sharp: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowReport {
    /// Starting point of the shadow orbit, `Y_n(x₀)` or `Υ_n(x₀)`.
    pub y0: f64,
    /// `n + 1` points in `[0, 1)`.
    pub shadow_orbit: Vec<f64>,
    /// Largest one-step mismatch `|f_k(y_k) − y_{k+1} − d_k|` on the lift.
    pub residual: f64,
    pub theta_error_max: f64,
    pub x_error_max: f64,
    /// Slow error per step: `θ_k − θ* − ε Σ_{j<k} ω(y_j, θ*)` or `θ_k − θ̄_k`.
    pub eta: Vec<f64>,
    /// Fast error per step: `x_k − y_k` on the circle.
    pub xi: Vec<f64>,
}

/// Integer parts `d_k` with `f(x_k, θ_k) = x_{k+1} + d_k`.
fn itinerary(sys: &FastSlowSystem, orbit: &[TrajectoryState]) -> Result<Vec<f64>> {
    orbit
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let next = w[1].x;
            if !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&next) {
                return Err(Error::DegenerateOrbit { k });
            }
            Ok((sys.eval_f(w[0].x, w[0].z[0]) - next).round())
        })
        .collect()
}

/// Solve `f_{n-1} ∘ … ∘ f_0 (y) = x_n` along the digits; returns lifted `y_k` and the residual.
fn pull_back(maps: &[FiberMap<'_>], digits: &[f64], x_n: f64) -> (Vec<f64>, f64) {
    let n = maps.len();
    let mut y = vec![0.0; n + 1];
    y[n] = x_n;
    for k in (0..n).rev() {
        y[k] = maps[k].inverse_bisect(y[k + 1] + digits[k]);
    }
    let residual = (0..n).map(|k| (maps[k].lift(y[k]) - y[k + 1] - digits[k]).abs()).fold(0.0, f64::max);
    (y, residual)
}

fn finish(y: Vec<f64>, residual: f64, orbit: &[TrajectoryState], eta: Vec<f64>) -> ShadowReport {
    let xi: Vec<f64> = orbit.iter().zip(&y).map(|(s, &yk)| circle_diff(s.x, yk)).collect();
    let shadow_orbit: Vec<f64> = y.iter().map(|v| v.rem_euclid(1.0)).collect();
    ShadowReport {
        y0: shadow_orbit[0],
        shadow_orbit,
        residual,
        theta_error_max: eta.iter().map(|e| e.abs()).fold(0.0, f64::max),
        x_error_max: xi.iter().map(|e| e.abs()).fold(0.0, f64::max),
        eta,
        xi,
    }
}

/// Shadow the orbit of `(x₀, θ₀)` by an orbit of `f_* = f(·, θ*)` with the same endpoint.
pub fn shadow_reconstruct(
    sys: &FastSlowSystem,
    x0: f64,
    theta0: f64,
    n: usize,
    theta_star: f64,
    cfg: &ShadowConfig,
) -> Result<ShadowReport> {
    let offset = circle_diff(theta0, theta_star).abs();
    let load = offset * n as f64 + sys.epsilon * (n * n) as f64;
    if offset > 0.1 || load > cfg.c_sharp {
        return Err(Error::Precondition(format!(
            "|θ0 − θ*| = {offset} and |θ0 − θ*|·n + ε·n² = {load} exceed the shadowing region"
        )));
    }
    let orbit = simulate(sys, &TrajectoryState::new(sys, x0, theta0), n)?;
    let digits = itinerary(sys, &orbit)?;
    let star = sys.fiber(theta_star);
    let (y, residual) = pull_back(&vec![star; n], &digits, orbit[n].x);
    let mut drift = 0.0;
    let mut eta = Vec::with_capacity(n + 1);
    for (k, s) in orbit.iter().enumerate() {
        eta.push(s.z[0] - theta0 + circle_diff(theta0, theta_star) - drift);
        if k < n {
            drift += sys.epsilon * sys.eval_omega(y[k].rem_euclid(1.0), theta_star);
        }
    }
    Ok(finish(y, residual, &orbit, eta))
}

/// Shadow the orbit of `(x₀, θ₀)` by the time-dependent composition
/// `f(·, θ̄_{n-1}) ∘ … ∘ f(·, θ̄_0)` with `θ̄_k = θ̄(εk, θ₀)`.
pub fn shadow_averaged(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    x0: f64,
    theta0: f64,
    n: usize,
    cfg: &ShadowConfig,
) -> Result<ShadowReport> {
    let load = sys.epsilon * (n * n) as f64;
    if load > cfg.c_sharp {
        return Err(Error::Precondition(format!("ε·n² = {load} exceeds the shadowing region")));
    }
    let orbit = simulate(sys, &TrajectoryState::new(sys, x0, theta0), n)?;
    let digits = itinerary(sys, &orbit)?;
    let theta_bar = averaged_orbit(tables, theta0, sys.epsilon, n)?;
    let maps: Vec<FiberMap<'_>> = theta_bar[..n].iter().map(|&t| sys.fiber(t)).collect();
    let (y, residual) = pull_back(&maps, &digits, orbit[n].x);
    let eta = orbit.iter().zip(&theta_bar).map(|(s, &tb)| s.z[0] - tb).collect();
    Ok(finish(y, residual, &orbit, eta))
}
