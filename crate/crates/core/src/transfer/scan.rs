//! Oscillatory-potential diagnostics: the `‖·‖_{1,ς}` growth scan and the
//! uniform non-integrability (UNI) separation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Discretization, Fiber, Potential, TransferOperator};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::system::FastSlowSystem;

const UNI_GRID: usize = 2048;

/// Knobs of the spectral-radius scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub seeds: usize,
    /// Iteration count must satisfy `n ≥ ⌈A ln|ς|⌉`.
    pub growth_constant: f64,
    pub rng_seed: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { seeds: 16, growth_constant: 8.0, rng_seed: 0x5eed }
    }
}

/// Derivative of a grid function: spectral for Fourier, centred differences for Ulam.
fn grid_derivative(op: &TransferOperator, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    match op.discretization {
        Discretization::Fourier { .. } => (0..n)
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &vi) in v.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let k = j as isize - i as isize;
                    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    acc += vi * (sign * PI / (PI * k as f64 / n as f64).tan());
                }
                acc
            })
            .collect(),
        Discretization::Ulam { .. } => {
            (0..n).map(|j| (v[(j + 1) % n] - v[(j + n - 1) % n]) * (n as f64 / 2.0)).collect()
        }
    }
}

fn norm_1_varsigma(op: &TransferOperator, v: &[Complex64], varsigma: f64) -> f64 {
    let sup = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let dsup = grid_derivative(op, v).iter().map(|z| z.norm()).fold(0.0, f64::max);
    sup + dsup / varsigma.abs()
}

/// Largest growth rate of `‖Lᵏ s‖_{1,ς}` over random analytic seeds.
///
/// The rate is measured between `k = n/2` and `k = n`, which removes the
/// transient of each seed and isolates the dominant modulus.
pub fn spectral_radius_of(op: &TransferOperator, varsigma: f64, n: usize, opts: &ScanOptions) -> Result<f64> {
    if n < 2 {
        return Err(Error::Precondition("the scan needs at least two iterations".into()));
    }
    let half = n / 2;
    let rates: Vec<f64> = (0..opts.seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = CounterRng::new(opts.rng_seed, s as u64);
            let modes: Vec<(i32, Complex64)> = (-8..=8)
                .map(|k: i32| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    (k, Complex64::new(re, im) * (-(k.abs() as f64) / 2.0).exp())
                })
                .collect();
            let mut v: Vec<Complex64> = op
                .nodes
                .iter()
                .map(|&x| modes.iter().map(|&(k, c)| c * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x)).sum())
                .collect();
            let mut log_scale = 0.0;
            let mut log_norm_half = f64::NAN;
            for k in 1..=n {
                v = op.apply(&v);
                let sup = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
                if sup == 0.0 {
                    return 0.0;
                }
                log_scale += sup.ln();
                v.iter_mut().for_each(|z| *z /= sup);
                if k == half {
                    log_norm_half = log_scale + norm_1_varsigma(op, &v, varsigma).ln();
                }
            }
            let log_norm = log_scale + norm_1_varsigma(op, &v, varsigma).ln();
            ((log_norm - log_norm_half) / (n - half) as f64).exp()
        })
        .collect();
    Ok(rates.into_iter().fold(0.0, f64::max))
}

/// Growth estimate for `L_{θ, iςΩ}` with `Ω = ω − ω̄(θ)`.
pub fn spectral_radius_complex(
    sys: &FastSlowSystem,
    theta: f64,
    varsigma: f64,
    n: usize,
    disc: Discretization,
    opts: &ScanOptions,
) -> Result<f64> {
    if varsigma.abs() < 1.0 {
        return Err(Error::Precondition(format!("|ς| = {} must be at least 1", varsigma.abs())));
    }
    let needed = (opts.growth_constant * varsigma.abs().ln()).ceil() as usize;
    if n < needed {
        return Err(Error::Precondition(format!("n = {n} is below ⌈A ln|ς|⌉ = {needed}")));
    }
    let fiber = Fiber::new(sys, theta, disc)?;
    let op = fiber.operator(&Potential::Complex(varsigma))?;
    spectral_radius_of(&op, varsigma, n, opts)
}

/// UNI separation: the largest over pairs of `n`-step inverse branches of
/// `min_x |(Ω_n∘h)'(x) − (Ω_n∘κ)'(x)|` on a 2048-point grid.
pub fn uni_estimate(sys: &FastSlowSystem, theta: f64, n: usize) -> Result<f64> {
    if n == 0 || n > 12 {
        return Err(Error::Precondition(format!("n = {n} must lie in 1..=12")));
    }
    let fib = sys.fiber(theta);
    let deg = fib.degree();
    let th = theta.rem_euclid(1.0);
    let branches = deg.pow(n as u32);
    // derivs[x][branch]
    let derivs: Vec<Vec<f64>> = (0..UNI_GRID)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 / UNI_GRID as f64;
            // Each entry: (point y_k, dy_k/dx, partial sum of Ω'(y_j) dy_j/dx).
            let mut level = vec![(x, 1.0, 0.0)];
            for _ in 0..n {
                let mut next = Vec::with_capacity(level.len() * deg);
                for &(y, dy, acc) in &level {
                    for k in 0..deg {
                        let z = fib.branch(k, y);
                        let dz = dy / fib.deriv(z);
                        next.push((z, dz, acc + (sys.domega_dx)(z.rem_euclid(1.0), th) * dz));
                    }
                }
                level = next;
            }
            level.into_iter().map(|(_, _, acc)| acc).collect()
        })
        .collect();
    // Transpose to per-branch rows for cache-friendly pair scans.
    let rows: Vec<Vec<f64>> = (0..branches).map(|b| derivs.iter().map(|r| r[b]).collect()).collect();
    let mut best = 0.0f64;
    for a in 0..branches {
        for b in (a + 1)..branches {
            let (ra, rb) = (&rows[a], &rows[b]);
            let mut min = f64::INFINITY;
            for (u, v) in ra.iter().zip(rb) {
                let d = (u - v).abs();
                if d < min {
                    min = d;
                    if min <= best {
                        break;
                    }
                }
            }
            if min > best {
                best = min;
            }
        }
    }
    Ok(best)
}
