//! Path ensembles and empirical probes of averaging, moderate deviations,
//! exponential moments and the local limit theorem.
//!
//! Path `p` of a run with seed `s` draws everything (its initial point and
//! the low-order dithering of `x`) from the stream `CounterRng::new(s, p)`,
//! so results do not depend on the number of workers.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ldp::mgf_predict;
use crate::rng::CounterRng;
use crate::standardpairs::StandardPair;
use crate::statistics::{averaged_orbit, solve_averaged, variance_profile, AveragedPath, AveragedTables};
use crate::system::{FastSlowSystem, TrajectoryState};
use crate::transfer::Discretization;

/// Largest number of map iterations a single call may perform.
pub const MAX_TOTAL_STEPS: u64 = 1_000_000_000;
const CDF_BINS: usize = 4096;
const MIN_ESS: f64 = 100.0;
const MIN_WINDOW_COUNT: usize = 10;
const WILSON_Z: f64 = 1.959963984540054;
const AVERAGED_DT: f64 = 1e-3;

/// Law of the initial fast coordinate.
#[derive(Clone)]
pub enum InitialDensity {
    Uniform,
    /// Unnormalized density on `[0, 1)`.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// The (real, positive) density of a standard pair on its interval.
    Pair(StandardPair),
}

impl fmt::Debug for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "Uniform"),
            Self::Function(_) => write!(f, "Function(..)"),
            Self::Pair(p) => write!(f, "Pair([{}, {}])", p.a, p.b),
        }
    }
}

/// Inverse-CDF sampler over a piecewise-constant table.
#[derive(Debug, Clone)]
pub struct DensitySampler {
    lo: f64,
    width: f64,
    /// Cumulative mass at the right edge of each bin; empty for uniform.
    cdf: Vec<f64>,
}

impl DensitySampler {
    pub fn new(density: &InitialDensity) -> Result<Self> {
        let (lo, hi, rho): (f64, f64, Box<dyn Fn(f64) -> f64 + '_>) = match density {
            InitialDensity::Uniform => return Ok(Self { lo: 0.0, width: 1.0, cdf: Vec::new() }),
            InitialDensity::Function(f) => (0.0, 1.0, Box::new(move |x| f(x))),
            InitialDensity::Pair(p) => {
                if p.density.iter().any(|r| r.im.abs() > 1e-12 * r.norm()) {
                    return Err(Error::InvalidDensity("pair density is not real".into()));
                }
                (p.a, p.b, Box::new(move |x| p.density_at(x).re))
            }
        };
        let h = (hi - lo) / CDF_BINS as f64;
        let mut cdf = Vec::with_capacity(CDF_BINS);
        let mut acc = 0.0;
        for j in 0..CDF_BINS {
            let x = lo + (j as f64 + 0.5) * h;
            let w = rho(x);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidDensity(format!("density is {w} at x = {x}")));
            }
            acc += w;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidDensity("density has zero mass".into()));
        }
        Ok(Self { lo, width: hi - lo, cdf })
    }

    /// Point with CDF value `u ∈ [0, 1)`, reduced mod 1.
    pub fn sample(&self, u: f64) -> f64 {
        if self.cdf.is_empty() {
            return u;
        }
        let total = self.cdf[CDF_BINS - 1];
        let target = u * total;
        let j = self.cdf.partition_point(|&c| c <= target).min(CDF_BINS - 1);
        let before = if j == 0 { 0.0 } else { self.cdf[j - 1] };
        let frac = ((target - before) / (self.cdf[j] - before)).clamp(0.0, 1.0);
        let x = self.lo + (j as f64 + frac) * self.width / CDF_BINS as f64;
        let x = x.rem_euclid(1.0);
        if x >= 1.0 {
            0.0
        } else {
            x
        }
    }
}

/// `n` initial points; point `i` uses the first draw of stream `(seed, i)`.
pub fn sample_initial(density: &InitialDensity, n: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = DensitySampler::new(density)?;
    Ok((0..n).map(|i| sampler.sample(CounterRng::new(seed, i as u64).uniform())).collect())
}

/// Step index and interpolation weight of time `t` on the `ε` lattice.
fn lattice_position(t: f64, eps: f64) -> (usize, f64) {
    if eps == 0.0 {
        return (0, 0.0);
    }
    let s = t / eps;
    let k = s.floor();
    let frac = s - k;
    if frac < 1e-9 {
        (k as usize, 0.0)
    } else if frac > 1.0 - 1e-9 {
        (k as usize + 1, 0.0)
    } else {
        (k as usize, frac)
    }
}

fn steps_needed(pos: &[(usize, f64)]) -> usize {
    pos.last().map_or(0, |&(k, fr)| k + usize::from(fr > 0.0))
}

fn check_budget(n_paths: usize, steps: usize) -> Result<()> {
    let total = n_paths as u128 * steps as u128;
    if total > MAX_TOTAL_STEPS as u128 {
        return Err(Error::Resource(format!("{total} map steps exceed the cap of {MAX_TOTAL_STEPS}")));
    }
    Ok(())
}

/// Run one path and report the interpolated `z_ε(t_i)` at each lattice position.
///
/// `on_grid` returns `false` to stop the path early.
fn walk_path(
    sys: &FastSlowSystem,
    x0: f64,
    theta0: f64,
    pos: &[(usize, f64)],
    rng: &mut CounterRng,
    mut on_grid: impl FnMut(usize, &[f64]) -> bool,
) -> Result<()> {
    let mut state = TrajectoryState::new(sys, x0, theta0);
    let mut prev = state.z.clone();
    let mut buf = state.z.clone();
    let (mut i, mut k) = (0, 0);
    loop {
        while i < pos.len() {
            let (ki, fr) = pos[i];
            if fr == 0.0 && ki == k {
                buf.copy_from_slice(&state.z);
            } else if fr > 0.0 && ki + 1 == k {
                for ((b, p), c) in buf.iter_mut().zip(&prev).zip(&state.z) {
                    *b = p + fr * (c - p);
                }
            } else {
                break;
            }
            if !on_grid(i, &buf) {
                return Ok(());
            }
            i += 1;
        }
        if i == pos.len() {
            return Ok(());
        }
        prev.copy_from_slice(&state.z);
        sys.step_in_place(&mut state.x, &mut state.z, Some(rng))?;
        k += 1;
    }
}

fn uniform_grid(t_end: f64, out_dt: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0 && t_end.is_finite()) || !(out_dt > 0.0) {
        return Err(Error::Precondition(format!(
            "T = {t_end} and output step {out_dt} must be finite, T >= 0, step > 0"
        )));
    }
    let m = (t_end / out_dt).ceil() as usize;
    Ok(if m == 0 { vec![0.0] } else { (0..=m).map(|i| i as f64 * t_end / m as f64).collect() })
}

/// Interpolated paths `z_ε(t)` on a uniform output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub epsilon: f64,
    pub t_end: f64,
    pub theta0: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    /// `paths[p][i]` is `z_ε(t_i)` for path `p`.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    /// `θ_ε(t_i)` of path `p`.
    pub fn theta(&self, p: usize, i: usize) -> f64 {
        self.paths[p][i][0]
    }
}

/// Simulate `n_paths` orbits from `x ~ density`, `θ = θ₀`, sampled every `out_dt` (grid `T/⌈T/out_dt⌉`).
pub fn ensemble_paths(
    sys: &FastSlowSystem,
    theta0: f64,
    density: &InitialDensity,
    t_end: f64,
    n_paths: usize,
    seed: u64,
    out_dt: f64,
) -> Result<PathEnsemble> {
    let t_grid = uniform_grid(t_end, out_dt)?;
    let pos: Vec<(usize, f64)> = t_grid.iter().map(|&t| lattice_position(t, sys.epsilon)).collect();
    check_budget(n_paths, steps_needed(&pos))?;
    let sampler = DensitySampler::new(density)?;
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = CounterRng::new(seed, p as u64);
            let x0 = sampler.sample(rng.uniform());
            let mut out = Vec::with_capacity(pos.len());
            walk_path(sys, x0, theta0, &pos, &mut rng, |_, z| {
                out.push(z.to_vec());
                true
            })?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { epsilon: sys.epsilon, t_end, theta0, n_paths, seed, t_grid, paths })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let u = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] * (1.0 - u) + sorted[k + 1] * u
    } else {
        sorted[k]
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_exponent(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Wilson score interval at 95% for `hits` successes in `n` trials.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (nf, p) = (n as f64, hits as f64 / n as f64);
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    /// `sup_i |θ_ε(t_i) − θ̄(t_i)|` per path.
    pub sup_deviation: Vec<f64>,
    /// `(q, value)` for `q ∈ {0.5, 0.9, 0.99}`.
    pub quantiles: Vec<(f64, f64)>,
}

impl AveragingReport {
    pub fn median(&self) -> f64 {
        self.quantiles[0].1
    }
}

pub fn averaging_error(ens: &PathEnsemble, averaged: &AveragedPath) -> Result<AveragingReport> {
    let same = ens.t_grid.len() == averaged.t_grid.len()
        && ens.t_grid.iter().zip(&averaged.t_grid).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same {
        return Err(Error::Interface("ensemble and averaged path use different time grids".into()));
    }
    let sup_deviation: Vec<f64> = ens
        .paths
        .iter()
        .map(|path| path.iter().zip(&averaged.theta_bar).map(|(z, tb)| (z[0] - tb).abs()).fold(0.0, f64::max))
        .collect();
    let mut sorted = sup_deviation.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.5, 0.9, 0.99].iter().map(|&q| (q, quantile(&sorted, q))).collect();
    Ok(AveragingReport { sup_deviation, quantiles })
}

/// Samples of `H_k` and `Δ_k = θ_k − θ̄_k` at `k = ⌊t/ε⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRefReport {
    pub steps: usize,
    pub h: Vec<f64>,
    pub delta: Vec<f64>,
    /// `kε² + ε Σ_{j<k} (H_j² + ε|H_j|)` per path.
    pub bound_term: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Linearized deviation `H_k = ε Σ_{j<k} exp(ε Σ_{l=j+1}^{k-1} ω̄'(θ̄_l)) ω̂(x_j, θ_j)`
/// next to the true `Δ_k`.
pub fn etaref_process(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    theta0: f64,
    density: &InitialDensity,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EtaRefReport> {
    let eps = sys.epsilon;
    let (k, _) = lattice_position(t, eps);
    check_budget(n_paths, k)?;
    let bar = averaged_orbit(tables, theta0, eps, k)?;
    let growth: Vec<f64> = bar.iter().map(|&tb| (eps * tables.omega_bar_prime(tb)).exp()).collect();
    let sampler = DensitySampler::new(density)?;
    let rows = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = CounterRng::new(seed, p as u64);
            let mut s = TrajectoryState::new(sys, sampler.sample(rng.uniform()), theta0);
            let (mut h, mut acc) = (0.0f64, 0.0f64);
            for &g in &growth[..k] {
                acc += h * h + eps * h.abs();
                let hat = sys.eval_omega(s.x, s.z[0]) - tables.omega_bar(s.z[0]);
                h = g * h + eps * hat;
                sys.step_in_place(&mut s.x, &mut s.z, Some(&mut rng))?;
            }
            Ok((h, s.z[0] - bar[k], k as f64 * eps * eps + eps * acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_abs_diff = rows.iter().map(|(h, d, _)| (h - d).abs()).fold(0.0, f64::max);
    let (h, rest): (Vec<f64>, Vec<(f64, f64)>) = rows.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
    let (delta, bound_term) = rest.into_iter().unzip();
    Ok(EtaRefReport { steps: k, h, delta, bound_term, max_abs_diff })
}

/// Histogram and local-window comparison of `Δ_ε(t)/√ε` with `N(0, Var_t²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LltReport {
    pub t: f64,
    pub epsilon: f64,
    /// Window offset in units of `√ε`.
    pub shift: f64,
    pub bin_width: f64,
    pub bin_centers: Vec<f64>,
    /// Normalized over samples inside `±6·Var_t`.
    pub empirical_density: Vec<f64>,
    pub predicted_density: Vec<f64>,
    pub ks: f64,
    pub mean: f64,
    pub sample_variance: f64,
    pub target_variance: f64,
    pub variance_ratio: f64,
    /// Samples with `Δ_ε(t) ∈ [shift·√ε, shift·√ε + ε)`.
    pub window_count: usize,
    pub window_expected: f64,
    pub insufficient_samples: bool,
}

/// Kolmogorov–Smirnov distance of sorted samples to a continuous CDF.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = cdf(y);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Samples of `Δ_ε(t)/√ε` for `x₀` uniform and `θ = θ₀`.
pub fn scaled_deviations(
    sys: &FastSlowSystem,
    theta_bar_t: f64,
    theta0: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let pos = [lattice_position(t, sys.epsilon)];
    check_budget(n_paths, steps_needed(&pos))?;
    let scale = sys.epsilon.sqrt();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = CounterRng::new(seed, p as u64);
            let x0 = rng.uniform();
            let mut theta = f64::NAN;
            walk_path(sys, x0, theta0, &pos, &mut rng, |_, z| {
                theta = z[0];
                true
            })?;
            Ok((theta - theta_bar_t) / scale)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn llt_check(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    theta0: f64,
    t: f64,
    shift: f64,
    bins: usize,
    n_paths: usize,
    seed: u64,
) -> Result<LltReport> {
    if !(t > 0.0) || bins == 0 || n_paths < 2 {
        return Err(Error::Precondition("llt_check needs t > 0, bins > 0 and at least two paths".into()));
    }
    let eps = sys.epsilon;
    let theta_bar = *solve_averaged(tables, theta0, t, AVERAGED_DT)?.theta_bar.last().unwrap_or(&theta0);
    let target = variance_profile(tables, theta0, t, AVERAGED_DT)?.final_variance();
    if !(target > 0.0) {
        return Err(Error::DegenerateVariance(target));
    }
    let mut ys = scaled_deviations(sys, theta_bar, theta0, t, n_paths, seed)?;
    ys.sort_by(f64::total_cmp);
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sample_variance = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = target.sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::NumericDomain {
        field: format!("normal: {e}"),
        x: 0.0,
        theta: theta0,
    })?;
    let ks = ks_distance(&ys, |y| normal.cdf(y));
    let (lo, hi) = (-6.0 * sd, 6.0 * sd);
    let bin_width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &y in &ys {
        if (lo..hi).contains(&y) {
            counts[(((y - lo) / bin_width) as usize).min(bins - 1)] += 1;
        }
    }
    let inside: usize = counts.iter().sum();
    let bin_centers: Vec<f64> = (0..bins).map(|j| lo + (j as f64 + 0.5) * bin_width).collect();
    let empirical_density =
        counts.iter().map(|&c| if inside == 0 { 0.0 } else { c as f64 / (inside as f64 * bin_width) }).collect();
    let predicted_density = bin_centers
        .iter()
        .map(|&c| (-c * c / (2.0 * target)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    let w = eps.sqrt();
    let window_count = ys.iter().filter(|&&y| y >= shift && y < shift + w).count();
    let window_expected = n * (normal.cdf(shift + w) - normal.cdf(shift));
    Ok(LltReport {
        t,
        epsilon: eps,
        shift,
        bin_width,
        bin_centers,
        empirical_density,
        predicted_density,
        ks,
        mean,
        sample_variance,
        target_variance: target,
        variance_ratio: sample_variance / target,
        window_count,
        window_expected,
        insufficient_samples: window_count < MIN_WINDOW_COUNT,
    })
}

/// Event `|θ_ε(s) − θ̄(s)| ≥ ε^β·C·s` at every output time `s ∈ (0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerateConfig {
    pub c_event: f64,
    pub beta: f64,
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Number of output intervals on `[0, T]`.
    pub grid_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerateRow {
    pub epsilon: f64,
    pub n_paths: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `−ε^{1−2β} ln p̂`, absent when there are no hits.
    pub scaled_rate: Option<f64>,
    /// `−ε^{1−2β} ln(ci_high)`, a lower confidence bound on the scaled rate.
    pub scaled_rate_lower: f64,
    /// `C² T / (2 Σ²₁₁(θ₀))`.
    pub target: f64,
}

pub fn moderate_probe(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    theta0: f64,
    cfg: &ModerateConfig,
) -> Result<Vec<ModerateRow>> {
    if !(cfg.beta > 0.25 && cfg.beta < 0.5) {
        return Err(Error::Precondition(format!("β = {} must lie in (1/4, 1/2)", cfg.beta)));
    }
    if !(cfg.t_end > 0.0) || cfg.grid_intervals == 0 || !(cfg.c_event >= 0.0) {
        return Err(Error::Precondition("moderate_probe needs T > 0, C ≥ 0 and a nonempty grid".into()));
    }
    let m = cfg.grid_intervals;
    let sub = ((cfg.t_end / m as f64) / AVERAGED_DT).ceil() as usize;
    let bar = solve_averaged(tables, theta0, cfg.t_end, cfg.t_end / (m * sub) as f64)?;
    let t_grid: Vec<f64> = (0..=m).map(|i| i as f64 * cfg.t_end / m as f64).collect();
    let theta_bar: Vec<f64> = (0..=m).map(|i| bar.theta_bar[i * sub]).collect();
    let sigma2 = tables.sigma2_theta(theta0);
    let target = cfg.c_event * cfg.c_event * cfg.t_end / (2.0 * sigma2);
    cfg.eps_list
        .iter()
        .enumerate()
        .map(|(idx, &eps)| {
            let s = sys.with_epsilon(eps);
            let pos: Vec<(usize, f64)> = t_grid.iter().map(|&t| lattice_position(t, eps)).collect();
            check_budget(cfg.n_paths, steps_needed(&pos))?;
            let scale = eps.powf(cfg.beta) * cfg.c_event;
            let seed = cfg.seed.wrapping_add(idx as u64);
            let hits: usize = (0..cfg.n_paths)
                .into_par_iter()
                .map(|p| {
                    let mut rng = CounterRng::new(seed, p as u64);
                    let x0 = rng.uniform();
                    let mut inside = true;
                    walk_path(&s, x0, theta0, &pos, &mut rng, |i, z| {
                        inside = i == 0 || (z[0] - theta_bar[i]).abs() >= scale * t_grid[i];
                        inside
                    })?;
                    Ok(usize::from(inside))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum();
            let p_hat = hits as f64 / cfg.n_paths as f64;
            let (ci_low, ci_high) = wilson_interval(hits, cfg.n_paths);
            let factor = eps.powf(1.0 - 2.0 * cfg.beta);
            Ok(ModerateRow {
                epsilon: eps,
                n_paths: cfg.n_paths,
                hits,
                p_hat,
                ci_low,
                ci_high,
                scaled_rate: (hits > 0).then(|| -factor * p_hat.ln()),
                scaled_rate_lower: -factor * ci_high.ln(),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfReport {
    /// `ε ln E exp(Σ_{k<⌊T/ε⌋} ⟨σ, A(x_k, θ_k)⟩)`.
    pub empirical: f64,
    pub predicted: f64,
    pub effective_sample_size: f64,
    pub low_ess: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn mgf_probe(
    sys: &FastSlowSystem,
    tables: &AveragedTables,
    theta0: f64,
    sigma: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    disc: Discretization,
) -> Result<MgfReport> {
    if sigma.len() != sys.dim() {
        return Err(Error::Interface(format!("σ has {} components, system has {}", sigma.len(), sys.dim())));
    }
    let norm = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if norm > 0.2 {
        return Err(Error::Precondition(format!("|σ| = {norm} exceeds 0.2")));
    }
    if n_paths == 0 {
        return Err(Error::Precondition("mgf_probe needs at least one path".into()));
    }
    let eps = sys.epsilon;
    let pos = [lattice_position(t_end, eps)];
    let steps = pos[0].0;
    check_budget(n_paths, steps)?;
    let exponents = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = CounterRng::new(seed, p as u64);
            let mut s = TrajectoryState::new(sys, rng.uniform(), theta0);
            let start = s.z.clone();
            for _ in 0..steps {
                sys.step_in_place(&mut s.x, &mut s.z, Some(&mut rng))?;
            }
            Ok(if eps == 0.0 {
                0.0
            } else {
                sigma.iter().zip(s.z.iter().zip(&start)).map(|(a, (z, z0))| a * (z - z0)).sum::<f64>() / eps
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - top).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let empirical = eps * (top + (sum / n_paths as f64).ln());
    let ess = sum * sum / sum_sq;
    let fixed = sigma.to_vec();
    let predicted = mgf_predict(sys, tables, &move |_| fixed.clone(), theta0, t_end, disc)?;
    Ok(MgfReport { empirical, predicted, effective_sample_size: ess, low_ess: ess < MIN_ESS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Preset;
    use std::f64::consts::PI;

    #[test]
    fn sampler_moments() {
        let xs = sample_initial(&InitialDensity::Uniform, 20_000, 1).unwrap();
        let se = (1.0 / 12.0 / 20_000f64).sqrt();
        assert!((xs.iter().sum::<f64>() / 20_000.0 - 0.5).abs() < 3.0 * se);
        let rho = InitialDensity::Function(Arc::new(|x| 1.0 + 0.5 * (2.0 * PI * x).sin()));
        let xs = sample_initial(&rho, 20_000, 2).unwrap();
        let mean = 0.5 - 1.0 / (4.0 * PI);
        assert!((xs.iter().sum::<f64>() / 20_000.0 - mean).abs() < 3.0 * se);
        assert!(sample_initial(&rho, 0, 2).unwrap().is_empty());
        let bad = InitialDensity::Function(Arc::new(|x| x - 0.5));
        assert!(matches!(sample_initial(&bad, 1, 0), Err(Error::InvalidDensity(_))));
    }

    #[test]
    fn ensemble_is_deterministic_and_lipschitz() {
        let sys = Preset::DoublingCos.build(1e-2).unwrap();
        let a = ensemble_paths(&sys, 0.25, &InitialDensity::Uniform, 1.0, 50, 9, 0.013).unwrap();
        let b = ensemble_paths(&sys, 0.25, &InitialDensity::Uniform, 1.0, 50, 9, 0.013).unwrap();
        assert_eq!(a, b);
        let lip = sys.sup_abs_a()[0] + 1e-6;
        let dt = a.t_grid[1];
        for path in &a.paths {
            for w in path.windows(2) {
                assert!((w[1][0] - w[0][0]).abs() <= lip * dt);
            }
        }
        let c = ensemble_paths(&sys, 0.25, &InitialDensity::Uniform, 0.0, 3, 9, 0.01).unwrap();
        assert!(c.paths.iter().all(|p| p.len() == 1 && p[0][0] == 0.25));
    }

    #[test]
    fn budget_cap_is_enforced() {
        let sys = Preset::DoublingCos.build(1e-6).unwrap();
        let r = ensemble_paths(&sys, 0.25, &InitialDensity::Uniform, 1.0, 2000, 0, 0.1);
        assert!(matches!(r, Err(Error::Resource(_))));
    }

    #[test]
    fn zero_coupling_has_no_averaging_error() {
        let sys = Preset::DoublingCos.build(0.0).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let ens = ensemble_paths(&sys, 0.5, &InitialDensity::Uniform, 1.0, 20, 3, 0.01).unwrap();
        let avg = solve_averaged(&tables, 0.5, 1.0, 0.01).unwrap();
        let r = averaging_error(&ens, &avg).unwrap();
        assert!(r.quantiles.iter().all(|&(_, v)| v == 0.0));
        let other = solve_averaged(&tables, 0.5, 1.0, 0.005).unwrap();
        assert!(matches!(averaging_error(&ens, &other), Err(Error::Interface(_))));
    }

    #[test]
    fn single_step_etaref() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let r = etaref_process(&sys, &tables, 0.3, &InitialDensity::Uniform, 1e-3, 50, 4).unwrap();
        assert_eq!(r.steps, 1);
        assert!(r.max_abs_diff < 1e-5, "{}", r.max_abs_diff);
    }

    #[test]
    fn wilson_and_quantiles() {
        let (lo, hi) = wilson_interval(50, 100);
        let (lo4, hi4) = wilson_interval(200, 400);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(((hi - lo) / (hi4 - lo4) - 2.0).abs() < 0.05);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert!((fit_exponent(&[1.0, 4.0, 9.0], &[1.0, 2.0, 3.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mgf_probe_at_zero_sigma() {
        let sys = Preset::DoublingCos.build(1e-2).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let r = mgf_probe(&sys, &tables, 0.5, &[0.0], 0.5, 100, 1, Discretization::default()).unwrap();
        assert_eq!((r.empirical, r.predicted), (0.0, 0.0));
        assert!(!r.low_ess);
    }

    #[test]
    fn moderate_probe_trivial_events() {
        let sys = Preset::DoublingCos.build(1e-2).unwrap();
        let tables = AveragedTables::build(&sys, Discretization::default()).unwrap();
        let mut cfg = ModerateConfig {
            c_event: 0.0,
            beta: 0.4,
            eps_list: vec![1e-2],
            t_end: 0.5,
            n_paths: 200,
            seed: 5,
            grid_intervals: 10,
        };
        let r = moderate_probe(&sys, &tables, 0.5, &cfg).unwrap();
        assert_eq!(r[0].hits, 200);
        assert_eq!(r[0].scaled_rate, Some(0.0));
        cfg.c_event = 1e6;
        let r = moderate_probe(&sys, &tables, 0.5, &cfg).unwrap();
        assert_eq!(r[0].hits, 0);
        assert!(r[0].scaled_rate.is_none() && r[0].scaled_rate_lower > 0.0);
    }
}
