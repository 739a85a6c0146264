//! Large-deviation rate functions.
//!
//! `χ̂_A(σ, θ)` is the log of the leading eigenvalue of the operator with
//! potential `⟨σ, Â(·, θ)⟩`. The rate `Z(b, θ)` is its Legendre transform in
//! the centred variable `b − Ā(θ)`; the maximizer `σ*` solves the stationary
//! equation `ν_σ(Â) = b − Ā(θ)`.

use std::collections::BTreeMap;
use std::ops::Add;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bisect_increasing;
use crate::statistics::{averaged_orbit, AveragedTables};
use crate::system::FastSlowSystem;
use crate::transfer::{Discretization, Fiber, DEFAULT_SIGMA_MAX};

/// Dense row-major matrix.
type Matrix = Vec<Vec<f64>>;

/// `|σ|` beyond which `b` is declared outside the domain.
pub const STATIONARY_SIGMA_MAX: f64 = 20.0;
/// Residual `|ν_σ(Â) − (b − Ā)|` accepted by the stationary solver.
pub const STATIONARY_TOL: f64 = 1e-8;
/// Default period bound for [`domain_estimate`].
pub const DEFAULT_P_MAX: usize = 10;

const MAX_NEWTON: usize = 80;
const COV_TOL: f64 = 1e-10;
const COV_TERMS: usize = 200;
const SUP_GRID: usize = 4096;

/// A rate value; `Infinite` marks points outside the domain and absorbs sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn is_finite(self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    /// The value, with `+∞` for `Infinite`.
    pub fn value(self) -> f64 {
        match self {
            RateValue::Finite(v) => v,
            RateValue::Infinite => f64::INFINITY,
        }
    }
}

impl Add for RateValue {
    type Output = RateValue;

    fn add(self, rhs: RateValue) -> RateValue {
        match (self, rhs) {
            (RateValue::Finite(a), RateValue::Finite(b)) => RateValue::Finite(a + b),
            _ => RateValue::Infinite,
        }
    }
}

/// Outcome of the stationary equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Stationary {
    Converged { sigma: Vec<f64>, residual: f64 },
    NotInDomain,
}

/// Rate evaluations at one fixed `θ`, sharing the discretized fiber.
pub struct RateSolver<'a> {
    fiber: Fiber<'a>,
    sigma2: Vec<Vec<f64>>,
    /// Range of each `A_a(·, θ)` padded by the largest grid increment.
    range: Vec<(f64, f64)>,
}

impl<'a> RateSolver<'a> {
    pub fn new(sys: &'a FastSlowSystem, theta: f64, disc: Discretization) -> Result<Self> {
        let fiber = Fiber::new(sys, theta, disc)?;
        let zero = vec![0.0; sys.dim()];
        let sigma2 = fiber.tilted_covariance(&zero, &fiber.zero, COV_TOL, COV_TERMS)?;
        let range = (0..sys.dim())
            .map(|a| {
                let v: Vec<f64> = (0..SUP_GRID).map(|i| sys.eval_a(a, i as f64 / SUP_GRID as f64, theta)).collect();
                let step = (0..SUP_GRID).map(|i| (v[(i + 1) % SUP_GRID] - v[i]).abs()).fold(0.0, f64::max);
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo - step, hi + step)
            })
            .collect();
        Ok(Self { fiber, sigma2, range })
    }

    pub fn abar(&self) -> &[f64] {
        &self.fiber.abar
    }

    /// Green–Kubo matrix `Σ²(θ)`.
    pub fn sigma2(&self) -> &[Vec<f64>] {
        &self.sigma2
    }

    pub fn chi_hat(&self, sigma: &[f64]) -> Result<f64> {
        self.fiber.chi_hat(sigma)
    }

    fn check_b(&self, b: &[f64]) -> Result<()> {
        let sys = self.fiber.sys;
        if b.len() != sys.dim() {
            return Err(Error::Interface(format!("b has {} entries, system has d={}", b.len(), sys.dim())));
        }
        for (a, &ba) in b.iter().enumerate() {
            if !(ba.abs() <= sys.sup_abs_a()[a] + 1.0) {
                return Err(Error::Precondition(format!("|b[{a}]| = {} exceeds sup|A| + 1", ba.abs())));
            }
        }
        Ok(())
    }

    /// `ν_σ(Â)` and, if requested, the tilted covariance at `σ`.
    fn gradient(&self, sigma: &[f64], hessian: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
        let tilt = self.fiber.tilted(sigma)?;
        let mean = self.fiber.tilted_mean(&tilt);
        let cov = if hessian { Some(self.fiber.tilted_covariance(sigma, &tilt, COV_TOL, COV_TERMS)?) } else { None };
        Ok((mean, cov))
    }

    /// Solve `ν_σ(Â) = b − Ā(θ)` for `σ`.
    ///
    /// Newton with the tilted covariance as Jacobian, seeded by the quadratic
    /// model. In one dimension the iteration is kept inside a sign-change
    /// bracket, which makes it globally convergent.
    pub fn stationary(&self, b: &[f64]) -> Result<Stationary> {
        self.check_b(b)?;
        if b.iter().zip(&self.range).any(|(&ba, &(lo, hi))| ba < lo || ba > hi) {
            return Ok(Stationary::NotInDomain);
        }
        let target: Vec<f64> = b.iter().zip(self.abar()).map(|(x, y)| x - y).collect();
        if b.len() == 1 {
            self.stationary_1d(target[0])
        } else {
            self.stationary_nd(&target)
        }
    }

    fn seed(&self, target: &[f64]) -> Vec<f64> {
        let d = target.len();
        let s2 = DMatrix::from_fn(d, d, |i, j| self.sigma2[i][j]);
        let seed = s2
            .lu()
            .solve(&DVector::from_column_slice(target))
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; d]);
        let norm = l2(&seed);
        if norm.is_finite() && norm <= STATIONARY_SIGMA_MAX {
            seed
        } else if norm.is_finite() {
            seed.iter().map(|s| s * STATIONARY_SIGMA_MAX / norm).collect()
        } else {
            vec![0.0; d]
        }
    }

    fn stationary_1d(&self, target: f64) -> Result<Stationary> {
        let g = |s: f64| -> Result<(f64, f64)> {
            let (m, c) = self.gradient(&[s], true)?;
            Ok((m[0] - target, c.map(|c| c[0][0]).unwrap_or(f64::NAN)))
        };
        let mut s = self.seed(&[target])[0];
        let (mut r, mut dr) = g(s)?;
        if r.abs() < STATIONARY_TOL {
            return Ok(Stationary::Converged { sigma: vec![s], residual: r.abs() });
        }
        // Bracket the root, moving against the sign of the residual.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if r < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut probe = s;
        let mut width = 0.5f64.max(s.abs());
        while !(lo.is_finite() && hi.is_finite()) {
            probe = if r < 0.0 { probe + width } else { probe - width };
            if probe.abs() > STATIONARY_SIGMA_MAX {
                probe = STATIONARY_SIGMA_MAX.copysign(probe);
            }
            let (rp, _) = g(probe)?;
            if rp.signum() != r.signum() || rp == 0.0 {
                if r < 0.0 {
                    hi = probe;
                } else {
                    lo = probe;
                }
            } else if probe.abs() >= STATIONARY_SIGMA_MAX {
                return Ok(Stationary::NotInDomain);
            } else {
                if r < 0.0 {
                    lo = probe;
                } else {
                    hi = probe;
                }
                width *= 2.0;
            }
        }
        for _ in 0..MAX_NEWTON {
            let mut next = s - r / dr;
            if !(next > lo && next < hi) || !dr.is_finite() || dr <= 0.0 {
                next = 0.5 * (lo + hi);
            }
            s = next;
            (r, dr) = g(s)?;
            if r.abs() < STATIONARY_TOL {
                return Ok(Stationary::Converged { sigma: vec![s], residual: r.abs() });
            }
            if r < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            if hi - lo < 1e-15 * (1.0 + s.abs()) {
                break;
            }
        }
        Err(Error::NonConvergence(format!("stationary equation stalled with residual {:e}", r.abs())))
    }

    fn stationary_nd(&self, target: &[f64]) -> Result<Stationary> {
        let d = target.len();
        let mut s = self.seed(target);
        let resid = |m: &[f64]| -> Vec<f64> { m.iter().zip(target).map(|(x, y)| x - y).collect() };
        let (m, c) = self.gradient(&s, true)?;
        let mut r = resid(&m);
        let mut cov = c.unwrap_or_default();
        for _ in 0..MAX_NEWTON {
            let rn = l2(&r);
            if rn < STATIONARY_TOL {
                return Ok(Stationary::Converged { sigma: s, residual: rn });
            }
            let h = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
            let step: Vec<f64> = match h.lu().solve(&DVector::from_column_slice(&r)) {
                Some(v) => v.iter().copied().collect(),
                None => return Err(Error::NonConvergence("singular tilted covariance".into())),
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = s.iter().zip(&step).map(|(a, b)| a - t * b).collect();
                if l2(&trial) > STATIONARY_SIGMA_MAX {
                    t *= 0.5;
                    continue;
                }
                let (m2, c2) = self.gradient(&trial, true)?;
                let r2 = resid(&m2);
                if l2(&r2) < rn {
                    s = trial;
                    r = r2;
                    cov = c2.unwrap_or_default();
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                let full: Vec<f64> = s.iter().zip(&step).map(|(a, b)| a - b).collect();
                if l2(&full) > STATIONARY_SIGMA_MAX {
                    return Ok(Stationary::NotInDomain);
                }
                break;
            }
        }
        Err(Error::NonConvergence(format!("stationary equation stalled with residual {:e}", l2(&r))))
    }

    /// `Z(b, θ) = ⟨σ*, b − Ā⟩ − χ̂(σ*, θ)`, with the stationary solution.
    pub fn rate(&self, b: &[f64]) -> Result<(RateValue, Stationary)> {
        let st = self.stationary(b)?;
        let value = match &st {
            Stationary::NotInDomain => RateValue::Infinite,
            Stationary::Converged { sigma, .. } => {
                let lin: f64 = sigma.iter().zip(b).zip(self.abar()).map(|((s, x), y)| s * (x - y)).sum();
                RateValue::Finite(lin - self.chi_hat(sigma)?)
            }
        };
        Ok((value, st))
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stationary multiplier `σ*(b, θ)`, or `NotInDomain`.
pub fn stationary_sigma(sys: &FastSlowSystem, b: &[f64], theta: f64, disc: Discretization) -> Result<Stationary> {
    RateSolver::new(sys, theta, disc)?.stationary(b)
}

/// `Z(b, θ)`.
pub fn rate_z(sys: &FastSlowSystem, b: &[f64], theta: f64, disc: Discretization) -> Result<RateValue> {
    Ok(RateSolver::new(sys, theta, disc)?.rate(b)?.0)
}

/// Regularized rates near the boundary of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedRate {
    pub plus: RateValue,
    pub minus: RateValue,
    /// Point where `minus` was evaluated.
    pub retracted: f64,
}

/// `(Z⁺, Z⁻)` for `d = 1`: inside the `ε̃`-collar of the periodic-orbit hull
/// `Z⁺ = +∞` and `Z⁻` is `Z` at the first point on the segment towards `Ā`
/// that leaves the collar.
pub fn rate_z_reg(
    sys: &FastSlowSystem,
    b: f64,
    theta: f64,
    eps_tilde: f64,
    p_max: usize,
    disc: Discretization,
) -> Result<RegularizedRate> {
    if !(eps_tilde > 0.0 && eps_tilde < 0.5) {
        return Err(Error::Precondition(format!("ε̃ = {eps_tilde} must lie in (0, 0.5)")));
    }
    if sys.dim() != 1 {
        return Err(Error::Interface("regularized rates are implemented for d = 1".into()));
    }
    let (lo, hi) = domain_estimate(sys, theta, p_max)?.hull[0];
    let depth = |x: f64| (x - lo).min(hi - x);
    let solver = RateSolver::new(sys, theta, disc)?;
    if depth(b) >= eps_tilde {
        let z = solver.rate(&[b])?.0;
        return Ok(RegularizedRate { plus: z, minus: z, retracted: b });
    }
    let abar = solver.abar()[0];
    let retracted = if depth(abar) < eps_tilde {
        abar
    } else {
        // depth is concave along the segment, so the exit point is unique.
        let lam = bisect_increasing(|l| depth(b + l * (abar - b)) - eps_tilde, 0.0, 1.0, 1e-7);
        let mut l = lam;
        while depth(b + l * (abar - b)) < eps_tilde && l < 1.0 {
            l = (l + 1e-7).min(1.0);
        }
        b + l * (abar - b)
    };
    let minus = solver.rate(&[retracted])?.0;
    Ok(RegularizedRate { plus: RateValue::Infinite, minus, retracted })
}

/// A piecewise-linear path with `γ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PathSpec {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::Precondition("path needs matching, non-empty breakpoints and values".into()));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("breakpoints must start at 0 and increase strictly".into()));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Precondition("path values must be finite vectors of one dimension".into()));
        }
        if values[0].iter().any(|&v| v != 0.0) {
            return Err(Error::Precondition("path must start at 0".into()));
        }
        Ok(Self { breakpoints, values })
    }

    /// Straight line `γ(t) = t·slope` on `[0, T]`.
    pub fn line(slope: Vec<f64>, t_end: f64) -> Result<Self> {
        let d = slope.len();
        Self::new(vec![0.0, t_end], vec![vec![0.0; d], slope.iter().map(|s| s * t_end).collect()])
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn slope(&self, seg: usize) -> Vec<f64> {
        let dt = self.breakpoints[seg + 1] - self.breakpoints[seg];
        self.values[seg + 1].iter().zip(&self.values[seg]).map(|(b, a)| (b - a) / dt).collect()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let seg = match self.breakpoints.iter().rposition(|&b| b <= t) {
            Some(s) if s < self.segments() => s,
            Some(_) => return self.values.last().unwrap().clone(),
            None => 0,
        };
        let u = (t - self.breakpoints[seg]) / (self.breakpoints[seg + 1] - self.breakpoints[seg]);
        self.values[seg].iter().zip(&self.values[seg + 1]).map(|(a, b)| a + u * (b - a)).collect()
    }

    /// Checks the dimension and the Lipschitz bound `|γ'_a| ≤ 2 sup|A_a|`.
    pub fn validate_for(&self, sys: &FastSlowSystem) -> Result<()> {
        if self.dim() != sys.dim() {
            return Err(Error::Interface(format!("path has d={}, system has d={}", self.dim(), sys.dim())));
        }
        for seg in 0..self.segments() {
            for (a, s) in self.slope(seg).iter().enumerate() {
                if s.abs() > 2.0 * sys.sup_abs_a()[a] {
                    return Err(Error::Precondition(format!("segment {seg} has slope {s} above 2 sup|A[{a}]|")));
                }
            }
        }
        Ok(())
    }
}

/// Reference slow coordinate used inside the path functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// `θ̄(s, θ₀)` along the averaged flow.
    Frozen,
    /// `θ₀ + γ₀(s)` read off the path itself.
    Moving,
}

/// Quadrature nodes: each segment's end points and the uniform grid inside it.
fn quadrature_nodes(path: &PathSpec, quad_dt: f64) -> Vec<(usize, Vec<f64>)> {
    (0..path.segments())
        .map(|seg| {
            let (a, b) = (path.breakpoints[seg], path.breakpoints[seg + 1]);
            let mut ts = vec![a];
            let mut k = (a / quad_dt).floor() as usize + 1;
            while (k as f64) * quad_dt < b - 1e-12 * quad_dt.max(b) {
                let t = k as f64 * quad_dt;
                if t > a + 1e-12 * quad_dt.max(b) {
                    ts.push(t);
                }
                k += 1;
            }
            ts.push(b);
            (seg, ts)
        })
        .collect()
}

fn trapezoid(ts: &[f64], vals: &[f64]) -> f64 {
    ts.windows(2).zip(vals.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// Evaluate `θ̄` at arbitrary times from a fine averaged orbit.
fn theta_bar_fn(tables: &AveragedTables, theta0: f64, t_end: f64) -> Result<impl Fn(f64) -> f64> {
    let h = 1e-3;
    let n = (t_end / h).ceil() as usize + 1;
    let orbit = averaged_orbit(tables, theta0, h, n)?;
    Ok(move |t: f64| {
        let s = (t / h).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let u = s - k as f64;
        orbit[k] * (1.0 - u) + orbit[k + 1] * u
    })
}

/// `∫₀ᵀ Z(γ'(s), θ_ref(s)) ds` by the trapezoid rule on each segment.
pub fn path_rate(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    path: &PathSpec,
    theta0: f64,
    quad_dt: f64,
    mode: RateMode,
    disc: Discretization,
) -> Result<RateValue> {
    path.validate_for(sys)?;
    if !(quad_dt > 0.0) {
        return Err(Error::Precondition("quad_dt must be positive".into()));
    }
    let theta_bar = theta_bar_fn(tables, theta0, path.horizon())?;
    let nodes = quadrature_nodes(path, quad_dt);
    // Unique (θ, slope) evaluations, keyed by bit patterns.
    let mut work: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    let theta_at = |t: f64| match mode {
        RateMode::Frozen => theta_bar(t),
        RateMode::Moving => theta0 + path.eval(t)[0],
    };
    for (seg, ts) in &nodes {
        for &t in ts {
            work.insert((theta_at(t).rem_euclid(1.0).to_bits(), *seg), 0.0);
        }
    }
    let keys: Vec<(u64, usize)> = work.keys().copied().collect();
    let values: Vec<RateValue> = keys
        .par_iter()
        .map(|&(bits, seg)| {
            let solver = RateSolver::new(sys, f64::from_bits(bits), disc)?;
            Ok(solver.rate(&path.slope(seg))?.0)
        })
        .collect::<Result<_>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Ok(RateValue::Infinite);
    }
    let table: BTreeMap<(u64, usize), f64> = keys.into_iter().zip(values.iter().map(|v| v.value())).collect();
    let mut total = 0.0;
    for (seg, ts) in &nodes {
        let vals: Vec<f64> = ts.iter().map(|&t| table[&(theta_at(t).rem_euclid(1.0).to_bits(), *seg)]).collect();
        total += trapezoid(ts, &vals);
    }
    Ok(RateValue::Finite(total))
}

/// `½∫ ⟨γ' − Ā(θ̄), Σ²(θ̄)⁻¹ (γ' − Ā(θ̄))⟩ ds` along the averaged flow.
pub fn rate_quadratic(tables: &AveragedTables, path: &PathSpec, theta0: f64, quad_dt: f64) -> Result<f64> {
    if path.dim() != tables.dim() {
        return Err(Error::Interface(format!("path has d={}, tables have d={}", path.dim(), tables.dim())));
    }
    if !(quad_dt > 0.0) {
        return Err(Error::Precondition("quad_dt must be positive".into()));
    }
    let d = path.dim();
    let theta_bar = theta_bar_fn(tables, theta0, path.horizon())?;
    let mut total = 0.0;
    for (seg, ts) in quadrature_nodes(path, quad_dt) {
        let slope = path.slope(seg);
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let th = theta_bar(t);
                let abar = tables.abar(th);
                let s2 = tables.sigma2(th);
                let dev: Vec<f64> = slope.iter().zip(&abar).map(|(a, b)| a - b).collect();
                if d == 1 {
                    if s2[0][0] < 1e-8 {
                        return Err(Error::DegenerateVariance(s2[0][0]));
                    }
                    return Ok(0.5 * dev[0] * dev[0] / s2[0][0]);
                }
                let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (s2[i][j] + s2[j][i]));
                let min_diag = (0..d).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min);
                let chol = m.cholesky().ok_or(Error::DegenerateVariance(min_diag))?;
                let v = DVector::from_column_slice(&dev);
                let w = chol.solve(&v);
                Ok(0.5 * v.dot(&w))
            })
            .collect::<Result<_>>()?;
        total += trapezoid(&ts, &vals);
    }
    Ok(total)
}

/// A periodic orbit of `f(·, θ)` with its Birkhoff average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Branch digits; `f(x_j) = x_{j+1} + word[j]` on the lift.
    pub word: Vec<u8>,
    pub points: Vec<f64>,
    pub average: Vec<f64>,
}

/// Periodic-orbit averages and their hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEstimate {
    pub orbits: Vec<PeriodicOrbit>,
    /// Per-component `[min, max]`; for `d = 1` this is the convex hull.
    pub hull: Vec<(f64, f64)>,
    pub skipped: usize,
}

/// Lyndon words of length `1..=n` over `k` letters (Duval's algorithm).
pub fn lyndon_words(k: usize, n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    if k == 0 || n == 0 {
        return out;
    }
    let mut w: Vec<isize> = vec![-1];
    while !w.is_empty() {
        *w.last_mut().unwrap() += 1;
        out.push(w.iter().map(|&c| c as u8).collect());
        let m = w.len();
        while w.len() < n {
            w.push(w[w.len() - m]);
        }
        while w.last() == Some(&(k as isize - 1)) {
            w.pop();
        }
    }
    out
}

/// Averages of `A` over all periodic orbits of `f(·, θ)` up to period `p_max`.
pub fn domain_estimate(sys: &FastSlowSystem, theta: f64, p_max: usize) -> Result<DomainEstimate> {
    let deg = sys.degree() as usize;
    if p_max == 0 || (deg as f64).powi(p_max as i32) > 4096.0 {
        return Err(Error::Precondition(format!("p_max = {p_max} must satisfy 1 ≤ p_max and D^p_max ≤ 4096")));
    }
    let fib = sys.fiber(theta);
    let th = theta.rem_euclid(1.0);
    let results: Vec<Option<PeriodicOrbit>> = lyndon_words(deg, p_max)
        .into_par_iter()
        .map(|word| {
            let compose = |x: f64| word.iter().rev().fold(x, |y, &c| fib.branch(c as usize, y));
            let g = |x: f64| x - compose(x);
            let (lo, hi) = (-1.0, 2.0);
            if !(g(lo) < 0.0 && g(hi) > 0.0) {
                return None;
            }
            let x = bisect_increasing(g, lo, hi, 1e-15);
            let mut points = vec![0.0; word.len()];
            let mut y = x;
            for j in (0..word.len()).rev() {
                y = fib.branch(word[j] as usize, y);
                points[j] = y;
            }
            let points: Vec<f64> = points.iter().map(|p| p.rem_euclid(1.0)).collect();
            let average = (0..sys.dim())
                .map(|a| points.iter().map(|&p| sys.eval_a(a, p, th)).sum::<f64>() / points.len() as f64)
                .collect();
            Some(PeriodicOrbit { word, points, average })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let orbits: Vec<PeriodicOrbit> = results.into_iter().flatten().collect();
    let hull = (0..sys.dim())
        .map(|a| {
            orbits
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.average[a]), hi.max(o.average[a])))
        })
        .collect();
    Ok(DomainEstimate { orbits, hull, skipped })
}

/// `∫₀ᵀ [⟨σ(s), Ā(θ̄(s))⟩ + χ̂(σ(s), θ̄(s))] ds`, trapezoid with step `10⁻³`.
pub fn mgf_predict(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    sigma_path: &(dyn Fn(f64) -> Vec<f64> + Sync),
    theta0: f64,
    t_end: f64,
    disc: Discretization,
) -> Result<f64> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Precondition(format!("T = {t_end} must be finite and >= 0")));
    }
    if t_end == 0.0 {
        return Ok(0.0);
    }
    let n = (t_end / 1e-3).ceil() as usize;
    let h = t_end / n as f64;
    let orbit = averaged_orbit(tables, theta0, h, n)?;
    let inputs: Vec<(f64, Vec<f64>)> = (0..=n).map(|k| (orbit[k], sigma_path(k as f64 * h))).collect();
    for (_, s) in &inputs {
        if l2(s) > DEFAULT_SIGMA_MAX {
            return Err(Error::Precondition(format!("|σ| = {} exceeds σ_max", l2(s))));
        }
    }
    let mut unique: BTreeMap<(u64, Vec<u64>), f64> = BTreeMap::new();
    for (th, s) in &inputs {
        unique.insert((th.rem_euclid(1.0).to_bits(), s.iter().map(|v| v.to_bits()).collect()), 0.0);
    }
    let keys: Vec<(u64, Vec<u64>)> = unique.keys().cloned().collect();
    let chis: Vec<f64> = keys
        .par_iter()
        .map(|(tb, sb)| {
            let sigma: Vec<f64> = sb.iter().map(|&b| f64::from_bits(b)).collect();
            if sigma.iter().all(|&s| s == 0.0) {
                return Ok(0.0);
            }
            Fiber::new(sys, f64::from_bits(*tb), disc)?.chi_hat(&sigma)
        })
        .collect::<Result<_>>()?;
    let chi: BTreeMap<(u64, Vec<u64>), f64> = keys.into_iter().zip(chis).collect();
    let ts: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let vals: Vec<f64> = inputs
        .iter()
        .map(|(th, s)| {
            let key = (th.rem_euclid(1.0).to_bits(), s.iter().map(|v| v.to_bits()).collect());
            let lin: f64 = s.iter().zip(tables.abar(*th)).map(|(a, b)| a * b).sum();
            lin + chi[&key]
        })
        .collect();
    Ok(trapezoid(&ts, &vals))
}

/// `Z(b, θ)` and `σ*(b, θ)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub theta_grid: Vec<f64>,
    pub b_grid: Vec<f64>,
    /// Unit direction for `d > 1`: node `(θ, s)` sits at `b = Ā(θ) + s·u`.
    pub direction: Option<Vec<f64>>,
    /// Indexed `[θ][b]`.
    pub z_values: Vec<Vec<RateValue>>,
    /// Component of `σ*` along the ray (the scalar `σ*` for `d = 1`); NaN off the domain.
    pub sigma_star: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
}

impl RateTable {
    /// Fill the table; nodes are independent and computed concurrently.
    ///
    /// For `d = 1`, `b_grid` holds absolute values of `b`. Otherwise a
    /// direction is required and `b_grid` holds offsets along it.
    pub fn build(
        sys: &FastSlowSystem,
        theta_grid: &[f64],
        b_grid: &[f64],
        direction: Option<Vec<f64>>,
        disc: Discretization,
    ) -> Result<Self> {
        let d = sys.dim();
        let unit = match (&direction, d) {
            (None, 1) => None,
            (Some(u), _) if u.len() == d && l2(u) > 0.0 => Some(u.iter().map(|x| x / l2(u)).collect::<Vec<_>>()),
            _ => return Err(Error::Interface("d > 1 rate tables need a direction of length d".into())),
        };
        let rows: Vec<Vec<(RateValue, f64, bool)>> = theta_grid
            .par_iter()
            .map(|&th| {
                let solver = RateSolver::new(sys, th, disc)?;
                b_grid
                    .par_iter()
                    .map(|&s| {
                        let b: Vec<f64> = match &unit {
                            None => vec![s],
                            Some(u) => solver.abar().iter().zip(u).map(|(a, ui)| a + s * ui).collect(),
                        };
                        match solver.rate(&b) {
                            Ok((z, Stationary::Converged { sigma, .. })) => {
                                let proj = match &unit {
                                    None => sigma[0],
                                    Some(u) => sigma.iter().zip(u).map(|(a, b)| a * b).sum(),
                                };
                                Ok((z, proj, true))
                            }
                            Ok((z, Stationary::NotInDomain)) => Ok((z, f64::NAN, true)),
                            Err(Error::NonConvergence(_)) => Ok((RateValue::Infinite, f64::NAN, false)),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            theta_grid: theta_grid.to_vec(),
            b_grid: b_grid.to_vec(),
            direction: unit,
            z_values: rows.iter().map(|r| r.iter().map(|c| c.0).collect()).collect(),
            sigma_star: rows.iter().map(|r| r.iter().map(|c| c.1).collect()).collect(),
            converged: rows.iter().map(|r| r.iter().map(|c| c.2).collect()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Preset;

    fn solver(sys: &FastSlowSystem) -> RateSolver<'_> {
        RateSolver::new(sys, 0.5, Discretization::default()).unwrap()
    }

    #[test]
    fn rate_vanishes_at_the_mean_and_seeds_linearly() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let s = solver(&sys);
        let (z, st) = s.rate(&[s.abar()[0]]).unwrap();
        assert!(z.value().abs() < 1e-8);
        match st {
            Stationary::Converged { sigma, .. } => assert!(sigma[0].abs() < 1e-6),
            _ => panic!("mean must be in the domain"),
        }
        match s.stationary(&[0.05]).unwrap() {
            // σ* = Z'(b) = 2b − 3b² + O(b³) from the cumulant expansion below.
            Stationary::Converged { sigma, .. } => assert!((sigma[0] - 0.0925).abs() < 1e-3, "{}", sigma[0]),
            _ => panic!("0.05 must be in the domain"),
        }
        assert_eq!(s.rate(&[1.5]).unwrap().0, RateValue::Infinite);
    }

    #[test]
    fn rate_matches_cumulant_expansion() {
        // Under doubling, E[cos²(2πx)cos(4πx)] = 1/4 is the only non-vanishing
        // triple correlation of cos(2πx), occurring in 3 orderings: κ₃ = 3/4.
        // With Σ² = 1/2 the Legendre transform gives Z(b) = b² − b³ + O(b⁴).
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let s = solver(&sys);
        for b in [-0.04, -0.02, 0.02, 0.04] {
            let z = s.rate(&[b]).unwrap().0.value();
            let model = b * b - b * b * b;
            assert!((z - model).abs() < 2.0 * b.powi(4), "b={b} z={z} model={model}");
        }
    }

    #[test]
    fn lyndon_counts_follow_necklace_formula() {
        let words = lyndon_words(2, 8);
        let mut counts = [0usize; 9];
        for w in &words {
            counts[w.len()] += 1;
        }
        assert_eq!(&counts[1..], &[2, 1, 2, 3, 6, 9, 18, 30]);
    }

    #[test]
    fn doubling_periodic_orbits() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let p1 = domain_estimate(&sys, 0.5, 1).unwrap();
        assert!(p1.orbits.iter().all(|o| (o.average[0] - 1.0).abs() < 1e-12));
        let p2 = domain_estimate(&sys, 0.5, 2).unwrap();
        assert!((p2.hull[0].0 + 0.5).abs() < 1e-12 && (p2.hull[0].1 - 1.0).abs() < 1e-12);
        let p3 = domain_estimate(&sys, 0.5, 3).unwrap();
        let third: Vec<f64> = p3.orbits.iter().filter(|o| o.word.len() == 3).map(|o| o.average[0]).collect();
        assert_eq!(third.len(), 2);
        assert!(third.iter().all(|a| (a + 1.0 / 6.0).abs() < 1e-12));
        assert_eq!(p3.hull, p2.hull);
    }

    #[test]
    fn quadratic_rate_of_a_line_is_closed_form() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let line = PathSpec::line(vec![0.05], 1.0).unwrap();
        let q = rate_quadratic(&tables, &line, 0.5, 0.01).unwrap();
        assert!((q - 0.0025).abs() < 1e-8, "{q}");
        let pr = path_rate(&sys, &tables, &line, 0.5, 0.1, RateMode::Frozen, Discretization::default()).unwrap();
        assert!((pr.value() - 0.0025).abs() < 0.2 * 0.0025);
        let cob = Preset::CoboundaryControl.build(1e-3).unwrap();
        let ctab = AveragedTables::build(&cob, Discretization::default()).unwrap();
        assert!(matches!(rate_quadratic(&ctab, &line, 0.5, 0.01), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn mgf_prediction_for_constant_sigma() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let p = mgf_predict(&sys, &tables, &|_| vec![0.1], 0.5, 0.5, Discretization::default()).unwrap();
        assert!((p - 0.00125).abs() < 1e-4, "{p}");
        assert_eq!(mgf_predict(&sys, &tables, &|_| vec![0.0], 0.5, 0.5, Discretization::default()).unwrap(), 0.0);
    }

    #[test]
    fn regularized_rate_retracts_out_of_the_collar() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let r = rate_z_reg(&sys, 0.95, 0.5, 0.1, 8, Discretization::default()).unwrap();
        assert_eq!(r.plus, RateValue::Infinite);
        assert!(r.retracted <= 0.9 + 1e-6 && r.retracted > 0.89);
        assert!(r.minus.is_finite());
        let inner = rate_z_reg(&sys, 0.2, 0.5, 0.1, 8, Discretization::default()).unwrap();
        assert_eq!(inner.plus, inner.minus);
    }
}
