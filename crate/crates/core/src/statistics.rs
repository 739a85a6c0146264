//! Averaged dynamics, Green–Kubo variances, the LLT variance profile and the
//! reference diffusion.
//!
//! Per-θ spectral quantities are tabulated once on a 256-node periodic grid
//! and interpolated by cubic splines ([`AveragedTables`]); every routine that
//! follows `θ̄(t)` reads from the table instead of solving eigenproblems.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::PeriodicSpline;
use crate::rng::CounterRng;
use crate::system::FastSlowSystem;
use crate::transfer::{Discretization, Fiber};

/// Number of θ nodes in [`AveragedTables`].
pub const TABLE_NODES: usize = 256;
/// Default truncation of Green–Kubo sums.
pub const GREEN_KUBO_TOL: f64 = 1e-12;
const GREEN_KUBO_MAX_TERMS: usize = 200;

/// `Ā(θ) = ∫ A(x, θ) h_θ(x) dx`; entry 0 is `ω̄(θ)`.
pub fn averaged_field(sys: &FastSlowSystem, theta: f64, disc: Discretization) -> Result<Vec<f64>> {
    Ok(Fiber::new(sys, theta, disc)?.abar)
}

/// Green–Kubo matrix `Σ²(θ) = μ(Â⊗Â) + Σ_{m≥1} [μ(Â∘f^m ⊗ Â) + transpose]`.
pub fn green_kubo(sys: &FastSlowSystem, theta: f64, tol: f64, disc: Discretization) -> Result<Vec<Vec<f64>>> {
    let fiber = Fiber::new(sys, theta, disc)?;
    green_kubo_on(&fiber, tol)
}

fn green_kubo_on(fiber: &Fiber<'_>, tol: f64) -> Result<Vec<Vec<f64>>> {
    let zero = vec![0.0; fiber.dim()];
    fiber.tilted_covariance(&zero, &fiber.zero, tol, GREEN_KUBO_MAX_TERMS)
}

/// Spline tables of `Ā(θ)` and `Σ²(θ)` over one period.
#[derive(Debug, Clone)]
pub struct AveragedTables {
    pub discretization: Discretization,
    abar: Vec<PeriodicSpline>,
    sigma2: Vec<Vec<PeriodicSpline>>,
}

impl AveragedTables {
    pub fn build(sys: &FastSlowSystem, disc: Discretization) -> Result<Self> {
        let d = sys.dim();
        let rows: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..TABLE_NODES)
            .into_par_iter()
            .map(|i| {
                let fiber = Fiber::new(sys, i as f64 / TABLE_NODES as f64, disc)?;
                let s2 = green_kubo_on(&fiber, GREEN_KUBO_TOL)?;
                Ok((fiber.abar.clone(), s2))
            })
            .collect::<Result<_>>()?;
        let abar = (0..d).map(|a| PeriodicSpline::new(rows.iter().map(|r| r.0[a]).collect())).collect();
        let sigma2 = (0..d)
            .map(|a| (0..d).map(|b| PeriodicSpline::new(rows.iter().map(|r| r.1[a][b]).collect())).collect())
            .collect();
        Ok(Self { discretization: disc, abar, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.abar.len()
    }

    pub fn abar(&self, theta: f64) -> Vec<f64> {
        self.abar.iter().map(|s| s.eval(theta)).collect()
    }

    pub fn omega_bar(&self, theta: f64) -> f64 {
        self.abar[0].eval(theta)
    }

    /// `ω̄'(θ)` by a centred difference of the interpolated table.
    pub fn omega_bar_prime(&self, theta: f64) -> f64 {
        let h = 1e-4;
        (self.abar[0].eval(theta + h) - self.abar[0].eval(theta - h)) / (2.0 * h)
    }

    pub fn sigma2(&self, theta: f64) -> Vec<Vec<f64>> {
        self.sigma2.iter().map(|row| row.iter().map(|s| s.eval(theta)).collect()).collect()
    }

    /// The `θθ` entry `Σ²₁₁(θ)`.
    pub fn sigma2_theta(&self, theta: f64) -> f64 {
        self.sigma2[0][0].eval(theta)
    }
}

/// Solution of `θ̄' = ω̄(θ̄)`, `ζ̄' = B̄(θ̄)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPath {
    pub t_grid: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub zeta_bar: Vec<Vec<f64>>,
    /// Step-halving error estimate at `T`.
    pub error_estimate: f64,
}

impl AveragedPath {
    /// Linear interpolation of `θ̄` at time `t`.
    pub fn theta_at(&self, t: f64) -> f64 {
        let n = self.t_grid.len();
        if n == 1 || t <= 0.0 {
            return self.theta_bar[0];
        }
        let dt = self.t_grid[1] - self.t_grid[0];
        let s = (t / dt).min((n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let u = s - k as f64;
        self.theta_bar[k] * (1.0 - u) + self.theta_bar[k + 1] * u
    }
}

fn rk4_run(tables: &AveragedTables, theta0: f64, steps: usize, h: f64, every: usize) -> Vec<Vec<f64>> {
    let d = tables.dim();
    let rhs = |y: &[f64]| tables.abar(y[0]);
    let mut y = vec![0.0; d];
    y[0] = theta0;
    let mut out = vec![y.clone()];
    for k in 0..steps {
        let k1 = rhs(&y);
        let y2: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k1[i]).collect();
        let k2 = rhs(&y2);
        let y3: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k2[i]).collect();
        let k3 = rhs(&y3);
        let y4: Vec<f64> = (0..d).map(|i| y[i] + h * k3[i]).collect();
        let k4 = rhs(&y4);
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if (k + 1) % every == 0 {
            out.push(y.clone());
        }
    }
    out
}

/// RK4 over `n` steps of size `h`, halving internal steps until the
/// step-halving estimate at the end is below `10⁻⁸·max(nh, 1)`.
fn integrate(tables: &AveragedTables, theta0: f64, n: usize, h: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let d = tables.dim();
    let tol = 1e-8 * (n as f64 * h).max(1.0);
    let mut refine = 1usize;
    loop {
        let coarse = rk4_run(tables, theta0, n * refine, h / refine as f64, refine);
        let fine = rk4_run(tables, theta0, 2 * n * refine, h / (2 * refine) as f64, 2 * refine);
        let err = (0..d).map(|i| (coarse[n][i] - fine[n][i]).abs() * 16.0 / 15.0).fold(0.0, f64::max);
        if err <= tol {
            return Ok((fine, err));
        }
        if refine >= 64 {
            return Err(Error::NonConvergence(format!("RK4 error {err:e} above {tol:e} after refinement")));
        }
        refine *= 2;
    }
}

/// RK4 for the averaged equation with a step-halving error check.
///
/// The output grid has spacing `T / ⌈T/dt⌉`.
pub fn solve_averaged(tables: &AveragedTables, theta0: f64, t_end: f64, dt: f64) -> Result<AveragedPath> {
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(Error::Precondition(format!("dt = {dt} must lie in (0, 1e-2]")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Precondition(format!("T = {t_end} must be finite and >= 0")));
    }
    let n = (t_end / dt).ceil() as usize;
    let h = if n == 0 { 0.0 } else { t_end / n as f64 };
    let (ys, err) = integrate(tables, theta0, n, h)?;
    Ok(AveragedPath {
        t_grid: (0..=n).map(|k| k as f64 * h).collect(),
        theta_bar: ys.iter().map(|y| y[0]).collect(),
        zeta_bar: ys.iter().map(|y| y[1..].to_vec()).collect(),
        error_estimate: err,
    })
}

/// `θ̄(kh, θ₀)` for `k = 0..=n`.
pub fn averaged_orbit(tables: &AveragedTables, theta0: f64, h: f64, n: usize) -> Result<Vec<f64>> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!("step {h} must be finite and >= 0")));
    }
    let sub = (h / 1e-2).ceil().max(1.0) as usize;
    let (ys, _) = integrate(tables, theta0, n * sub, h / sub as f64)?;
    Ok(ys.iter().step_by(sub).map(|y| y[0]).collect())
}

/// `Var_t²(θ₀)` of the linearized deviation along `θ̄`.
#[derive(Debug, Clone)]
pub struct VarianceProfile {
    pub t_grid: Vec<f64>,
    pub var_t: Vec<f64>,
    sigma2: Vec<Vec<PeriodicSpline>>,
}

impl VarianceProfile {
    /// `Σ²(θ)` as a symmetric `d×d` matrix.
    pub fn sigma2_of_theta(&self, theta: f64) -> Vec<Vec<f64>> {
        self.sigma2.iter().map(|row| row.iter().map(|s| s.eval(theta)).collect()).collect()
    }

    pub fn final_variance(&self) -> f64 {
        *self.var_t.last().unwrap_or(&0.0)
    }
}

/// `Var_t² = ∫₀ᵗ exp(2∫ₛᵗ ω̄'(θ̄(r)) dr) Σ²₁₁(θ̄(s)) ds` by nested trapezoids.
pub fn variance_profile(tables: &AveragedTables, theta0: f64, t_end: f64, dt: f64) -> Result<VarianceProfile> {
    let path = solve_averaged(tables, theta0, t_end, dt)?;
    let a: Vec<f64> = path.theta_bar.iter().map(|&th| tables.omega_bar_prime(th)).collect();
    let s: Vec<f64> = path.theta_bar.iter().map(|&th| tables.sigma2_theta(th).max(0.0)).collect();
    let mut var = vec![0.0; path.t_grid.len()];
    for k in 0..path.t_grid.len().saturating_sub(1) {
        let h = path.t_grid[k + 1] - path.t_grid[k];
        let growth = (h * (a[k] + a[k + 1])).exp();
        var[k + 1] = growth * var[k] + 0.5 * h * (growth * s[k] + s[k + 1]);
    }
    Ok(VarianceProfile { t_grid: path.t_grid, var_t: var, sigma2: tables.sigma2.clone() })
}

/// Euler–Maruyama samples of `Δ(T)` for `dΔ = ω̄'(θ̄) Δ dt + Σ(θ̄) dB`, `Δ(0) = 0`.
///
/// Path `p` draws its noise from the stream `(seed, p)`.
pub fn sde_reference(
    tables: &AveragedTables,
    theta0: f64,
    t_end: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::Precondition(format!("dt = {dt} must lie in (0, 1e-3]")));
    }
    let path = solve_averaged(tables, theta0, t_end, dt.min(1e-2))?;
    let steps = path.t_grid.len() - 1;
    let h = if steps > 0 { path.t_grid[1] } else { 0.0 };
    let drift: Vec<f64> = path.theta_bar.iter().map(|&th| tables.omega_bar_prime(th) * h).collect();
    let noise: Vec<f64> = path.theta_bar.iter().map(|&th| (tables.sigma2_theta(th).max(0.0) * h).sqrt()).collect();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = CounterRng::new(seed, p as u64);
            let mut delta = 0.0;
            for k in 0..steps {
                let xi: f64 = StandardNormal.sample(&mut rng);
                delta += drift[k] * delta + noise[k] * xi;
            }
            delta
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Preset;
    use std::f64::consts::PI;

    fn doubling_tables() -> AveragedTables {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        AveragedTables::build(&sys, Discretization::default()).unwrap()
    }

    #[test]
    fn doubling_cos_averages_and_variance() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        for &th in &[0.0, 0.13, 0.5, 0.77] {
            let abar = averaged_field(&sys, th, Discretization::default()).unwrap();
            assert!((abar[0] - 0.5 * (2.0 * PI * th).sin()).abs() < 1e-8);
            let s2 = green_kubo(&sys, th, GREEN_KUBO_TOL, Discretization::default()).unwrap();
            assert!((s2[0][0] - 0.5).abs() < 1e-8, "{}", s2[0][0]);
        }
    }

    #[test]
    fn coboundary_has_zero_variance() {
        let sys = Preset::CoboundaryControl.build(1e-3).unwrap();
        let s2 = green_kubo(&sys, 0.3, GREEN_KUBO_TOL, Discretization::default()).unwrap();
        assert!(s2[0][0].abs() < 1e-6, "{}", s2[0][0]);
    }

    #[test]
    fn averaged_ode_matches_separable_solution() {
        let tables = doubling_tables();
        // tan(πθ(t)) = tan(πθ0)·e^{πt}
        let path = solve_averaged(&tables, 0.25, 1.0, 1e-2).unwrap();
        let exact = PI.exp().atan() / PI;
        assert!((path.theta_bar.last().unwrap() - exact).abs() < 1e-6);
        let fixed = solve_averaged(&tables, 0.5, 1.0, 1e-2).unwrap();
        assert!(fixed.theta_bar.iter().all(|t| (t - 0.5).abs() < 1e-12));
        assert_eq!(solve_averaged(&tables, 0.3, 0.0, 1e-2).unwrap().theta_bar, vec![0.3]);
    }

    #[test]
    fn variance_profile_closed_form() {
        let tables = doubling_tables();
        let prof = variance_profile(&tables, 0.5, 1.0, 1e-3).unwrap();
        let exact = (1.0 - (-2.0 * PI).exp()) / (4.0 * PI);
        assert_eq!(prof.var_t[0], 0.0);
        assert!((prof.final_variance() - exact).abs() < 1e-4, "{}", prof.final_variance());
        assert!(prof.var_t.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn sde_reference_is_deterministic() {
        let tables = doubling_tables();
        let a = sde_reference(&tables, 0.5, 0.1, 1e-3, 64, 9).unwrap();
        let b = sde_reference(&tables, 0.5, 0.1, 1e-3, 64, 9).unwrap();
        assert_eq!(a, b);
        assert!(sde_reference(&tables, 0.5, 0.1, 1e-2, 4, 9).is_err());
    }
}
