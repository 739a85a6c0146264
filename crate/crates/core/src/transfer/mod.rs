//! Weighted transfer operators of the fast map at a frozen slow coordinate.
//!
//! For `θ` fixed and a potential `φ`, the operator is
//!
//! ```text
//! (L g)(x) = Σ_{f_θ(y) = x} e^{φ(y)} g(y) / ∂ₓf(y, θ)
//! ```
//!
//! Two discretizations are provided. Fourier collocation represents `g` by its
//! values on `N` equispaced nodes and evaluates the trigonometric interpolant
//! at the preimages, which is spectrally accurate for analytic data. Ulam's
//! method represents `g` by cell averages and is kept as an independent check.
//!
//! Functions on the grid are plain vectors; the Lebesgue integral of a grid
//! function is its mean in both discretizations.

mod scan;

pub use scan::{spectral_radius_complex, spectral_radius_of, uni_estimate, ScanOptions};

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::FastSlowSystem;

const ULAM_SUBSAMPLES: usize = 64;
const DENSE_LIMIT: usize = 512;
const POWER_MAX_ITER: usize = 4000;
const POWER_TOL: f64 = 1e-13;

/// Default bound on `|σ|` accepted by [`chi_hat`].
pub const DEFAULT_SIGMA_MAX: f64 = 5.0;

/// Grid used to discretize the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Discretization {
    Fourier { modes: usize },
    Ulam { cells: usize },
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization::Fourier { modes: 128 }
    }
}

impl Discretization {
    pub fn size(&self) -> usize {
        match *self {
            Discretization::Fourier { modes } => modes,
            Discretization::Ulam { cells } => cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.size();
        if n < 32 || !n.is_power_of_two() {
            return Err(Error::InvalidSpec(format!("grid size {n} must be a power of two >= 32")));
        }
        Ok(())
    }

    /// Sample points: collocation nodes or cell centres.
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.size();
        match self {
            Discretization::Fourier { .. } => (0..n).map(|j| j as f64 / n as f64).collect(),
            Discretization::Ulam { .. } => (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect(),
        }
    }
}

/// A potential `φ(·)` on the fast circle, exponentiated inside the operator.
#[derive(Clone)]
pub enum Potential {
    Zero,
    /// `⟨σ, Â(·, θ)⟩` with `Â = A − Ā(θ)`.
    RealLinear(Vec<f64>),
    /// `i ς Ω(·, θ)` with `Ω = ω − ω̄(θ)`.
    Complex(f64),
    /// An arbitrary complex potential of `x`.
    Custom(Arc<dyn Fn(f64) -> Complex64 + Send + Sync>),
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::RealLinear(s) => write!(f, "RealLinear({s:?})"),
            Potential::Complex(s) => write!(f, "Complex({s})"),
            Potential::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Everything needed to assemble one operator.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub theta: f64,
    pub potential: Potential,
    pub discretization: Discretization,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(DMatrix<Complex64>),
    /// Column `i` lists `(row, weight)` pairs.
    Sparse(Vec<Vec<(usize, Complex64)>>),
}

/// An assembled, immutable operator matrix acting on grid functions.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub theta: f64,
    pub discretization: Discretization,
    pub nodes: Vec<f64>,
    storage: Storage,
    complex_potential: bool,
    zero_potential: bool,
}

impl TransferOperator {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Dense matrix view (Fourier discretization only).
    pub fn dense(&self) -> Option<&DMatrix<Complex64>> {
        match &self.storage {
            Storage::Dense(m) => Some(m),
            Storage::Sparse(_) => None,
        }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        match &self.storage {
            Storage::Dense(m) => {
                let n = v.len();
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                // Column-major traversal keeps the inner loop contiguous.
                for (i, &vi) in v.iter().enumerate() {
                    if vi == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let col = m.column(i);
                    for (o, &c) in out.iter_mut().zip(col.iter()) {
                        *o += c * vi;
                    }
                }
                out
            }
            Storage::Sparse(cols) => {
                let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
                for (i, col) in cols.iter().enumerate() {
                    for &(j, w) in col {
                        out[j] += w * v[i];
                    }
                }
                out
            }
        }
    }

    /// `Mᵀ v` (plain transpose, no conjugation).
    pub fn apply_transpose(&self, v: &[Complex64]) -> Vec<Complex64> {
        match &self.storage {
            Storage::Dense(m) => m.tr_mul(&DVector::from_column_slice(v)).iter().copied().collect(),
            Storage::Sparse(cols) => cols.iter().map(|col| col.iter().map(|&(j, w)| w * v[j]).sum()).collect(),
        }
    }

    pub fn is_complex(&self) -> bool {
        self.complex_potential
    }

    pub fn is_zero_potential(&self) -> bool {
        self.zero_potential
    }
}

/// Lebesgue integral of a grid function.
pub fn lebesgue(v: &[Complex64]) -> Complex64 {
    v.iter().sum::<Complex64>() / v.len() as f64
}

fn real_vec(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// Trigonometric cardinal function on `n` equispaced nodes, `n` even.
#[inline]
fn cardinal(n: usize, u: f64) -> f64 {
    let u = u - u.round();
    if u.abs() < 1e-15 {
        return 1.0;
    }
    (PI * n as f64 * u).sin() / (n as f64 * (PI * u).tan())
}

/// Preimage data of one fiber, reusable across potentials.
#[derive(Debug, Clone)]
enum Geometry {
    /// `points[j*D + k]` is branch `k` of node `j`; `kernels[k]` holds `S(y − x_i)/f'(y)`.
    Fourier { points: Vec<f64>, kernels: Vec<DMatrix<f64>>, degree: usize },
    /// Subsample `p = i*S + s` of cell `i` covers a sub-interval whose image
    /// meets cells `targets[offsets[p]..offsets[p + 1]]` with the paired length fractions.
    Ulam { points: Vec<f64>, targets: Vec<(usize, f64)>, offsets: Vec<usize> },
}

/// Zero-potential eigenpair and cached geometry for one `(θ, discretization)`.
#[derive(Clone)]
pub struct Fiber<'a> {
    pub sys: &'a FastSlowSystem,
    pub theta: f64,
    pub discretization: Discretization,
    pub nodes: Vec<f64>,
    geometry: Geometry,
    /// `A_i` at the geometry points, used to exponentiate linear potentials.
    obs_points: Vec<Vec<f64>>,
    /// `A_i` at the grid nodes (cell averages for Ulam).
    obs_nodes: Vec<Vec<f64>>,
    /// `Ā(θ)` from the invariant density.
    pub abar: Vec<f64>,
    /// Zero-potential data: density `h` with unit integral and left vector `m`.
    pub zero: EigenData,
}

impl<'a> Fiber<'a> {
    pub fn new(sys: &'a FastSlowSystem, theta: f64, discretization: Discretization) -> Result<Self> {
        discretization.validate()?;
        let nodes = discretization.nodes();
        let n = nodes.len();
        let fib = sys.fiber(theta);
        let d = sys.dim();
        let geometry = match discretization {
            Discretization::Fourier { .. } => {
                let deg = fib.degree();
                let mut points = Vec::with_capacity(n * deg);
                let mut kernels = vec![DMatrix::<f64>::zeros(n, n); deg];
                for (j, &x) in nodes.iter().enumerate() {
                    for (k, kern) in kernels.iter_mut().enumerate() {
                        let y = fib.branch(k, x);
                        let dy = fib.deriv(y);
                        if !(dy.is_finite() && dy > 1.0) {
                            return Err(Error::InvalidMap(format!("∂ₓf = {dy} at preimage {y} is not expanding")));
                        }
                        let inv = 1.0 / dy;
                        for i in 0..n {
                            kern[(j, i)] = inv * cardinal(n, y - nodes[i]);
                        }
                        points.push(y.rem_euclid(1.0));
                    }
                }
                Geometry::Fourier { points, kernels, degree: deg }
            }
            Discretization::Ulam { .. } => {
                let sub = (n * ULAM_SUBSAMPLES) as f64;
                let mut points = Vec::with_capacity(n * ULAM_SUBSAMPLES);
                let mut targets = Vec::with_capacity(2 * n * ULAM_SUBSAMPLES);
                let mut offsets = Vec::with_capacity(n * ULAM_SUBSAMPLES + 1);
                offsets.push(0);
                let mut lo_img = fib.lift(0.0);
                for p in 0..n * ULAM_SUBSAMPLES {
                    let hi_img = fib.lift((p + 1) as f64 / sub);
                    if !(lo_img.is_finite() && hi_img.is_finite() && hi_img > lo_img) {
                        return Err(Error::InvalidMap(format!("lift is not increasing near {}", p as f64 / sub)));
                    }
                    points.push((p as f64 + 0.5) / sub);
                    // Split the image interval across the cells it meets.
                    let (a, b) = (lo_img * n as f64, hi_img * n as f64);
                    let mut c = a.floor();
                    while c < b {
                        let part = (b.min(c + 1.0) - a.max(c)) / (b - a);
                        if part > 0.0 {
                            targets.push(((c as i64).rem_euclid(n as i64) as usize, part));
                        }
                        c += 1.0;
                    }
                    offsets.push(targets.len());
                    lo_img = hi_img;
                }
                Geometry::Ulam { points, targets, offsets }
            }
        };
        let th = theta.rem_euclid(1.0);
        let pts = match &geometry {
            Geometry::Fourier { points, .. } | Geometry::Ulam { points, .. } => points,
        };
        let obs_points: Vec<Vec<f64>> =
            (0..d).map(|a| pts.iter().map(|&y| (sys.observables[a])(y, th)).collect()).collect();
        let obs_nodes: Vec<Vec<f64>> = match &geometry {
            Geometry::Fourier { .. } => {
                (0..d).map(|a| nodes.iter().map(|&x| (sys.observables[a])(x, th)).collect()).collect()
            }
            Geometry::Ulam { .. } => obs_points
                .iter()
                .map(|vals| vals.chunks(ULAM_SUBSAMPLES).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
                .collect(),
        };
        let mut fiber = Fiber {
            sys,
            theta,
            discretization,
            nodes,
            geometry,
            obs_points,
            obs_nodes,
            abar: vec![0.0; d],
            zero: EigenData::placeholder(),
        };
        let op = fiber.assemble(|_| Complex64::new(1.0, 0.0), false, true);
        let zero = normalize_real(&op, dominant_pair(&op)?)?;
        fiber.abar = (0..d).map(|a| lebesgue(&mul_real(&fiber.obs_nodes[a], &zero.h)).re).collect();
        fiber.zero = zero;
        Ok(fiber)
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    /// Observable `A_i` sampled on the grid.
    pub fn observable_on_grid(&self, i: usize) -> &[f64] {
        &self.obs_nodes[i]
    }

    /// Centred observable `Â_i = A_i − Ā_i` on the grid.
    pub fn centered_on_grid(&self, i: usize) -> Vec<f64> {
        self.obs_nodes[i].iter().map(|v| v - self.abar[i]).collect()
    }

    fn assemble(&self, weight_of_point: impl Fn(usize) -> Complex64, complex: bool, zero: bool) -> TransferOperator {
        let n = self.nodes.len();
        let storage = match &self.geometry {
            Geometry::Fourier { kernels, degree, .. } => {
                let mut m = DMatrix::<Complex64>::zeros(n, n);
                for (k, kern) in kernels.iter().enumerate() {
                    let w: Vec<Complex64> = (0..n).map(|j| weight_of_point(j * degree + k)).collect();
                    for i in 0..n {
                        let kc = kern.column(i);
                        let mc = &mut m.column_mut(i);
                        for j in 0..n {
                            mc[j] += w[j] * kc[j];
                        }
                    }
                }
                Storage::Dense(m)
            }
            Geometry::Ulam { targets, offsets, .. } => {
                let mut cols = Vec::with_capacity(n);
                for i in 0..n {
                    let mut col: Vec<(usize, Complex64)> = Vec::with_capacity(4);
                    for s in 0..ULAM_SUBSAMPLES {
                        let p = i * ULAM_SUBSAMPLES + s;
                        let w = weight_of_point(p) / ULAM_SUBSAMPLES as f64;
                        for &(t, part) in &targets[offsets[p]..offsets[p + 1]] {
                            match col.iter_mut().find(|(j, _)| *j == t) {
                                Some(entry) => entry.1 += w * part,
                                None => col.push((t, w * part)),
                            }
                        }
                    }
                    cols.push(col);
                }
                Storage::Sparse(cols)
            }
        };
        TransferOperator {
            theta: self.theta,
            discretization: self.discretization,
            nodes: self.nodes.clone(),
            storage,
            complex_potential: complex,
            zero_potential: zero,
        }
    }

    fn points(&self) -> &[f64] {
        match &self.geometry {
            Geometry::Fourier { points, .. } | Geometry::Ulam { points, .. } => points,
        }
    }

    /// Operator for the given potential.
    pub fn operator(&self, potential: &Potential) -> Result<TransferOperator> {
        match potential {
            Potential::Zero => Ok(self.assemble(|_| Complex64::new(1.0, 0.0), false, true)),
            Potential::RealLinear(sigma) => {
                if sigma.len() != self.dim() {
                    return Err(Error::Interface(format!(
                        "σ has {} entries, system has d={}",
                        sigma.len(),
                        self.dim()
                    )));
                }
                let zero = sigma.iter().all(|&s| s == 0.0);
                Ok(self.assemble(
                    |p| {
                        let phi: f64 =
                            sigma.iter().enumerate().map(|(a, s)| s * (self.obs_points[a][p] - self.abar[a])).sum();
                        Complex64::new(phi.exp(), 0.0)
                    },
                    false,
                    zero,
                ))
            }
            Potential::Complex(vs) => Ok(self.assemble(
                |p| Complex64::from_polar(1.0, vs * (self.obs_points[0][p] - self.abar[0])),
                true,
                *vs == 0.0,
            )),
            Potential::Custom(phi) => {
                let d = phi(0.0) - phi(1.0 - 1e-13);
                if !(d.norm() <= 1e-10) {
                    return Err(Error::InvalidSpec(format!("custom potential is not periodic: jump {d}")));
                }
                let pts = self.points();
                let vals: Vec<Complex64> = pts.iter().map(|&y| phi(y).exp()).collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec("custom potential is not finite".into()));
                }
                let complex = vals.iter().any(|v| v.im != 0.0);
                Ok(self.assemble(|p| vals[p], complex, false))
            }
        }
    }

    /// `χ̂_A(σ, θ)`: log of the leading eigenvalue for potential `⟨σ, Â⟩`.
    pub fn chi_hat(&self, sigma: &[f64]) -> Result<f64> {
        if sigma.iter().all(|&s| s == 0.0) {
            return Ok(0.0);
        }
        Ok(self.tilted(sigma)?.chi.re)
    }

    /// Leading eigentriple of the tilted operator with `m(h) = 1`.
    pub fn tilted(&self, sigma: &[f64]) -> Result<EigenData> {
        let op = self.operator(&Potential::RealLinear(sigma.to_vec()))?;
        normalize_real(&op, dominant_pair(&op)?)
    }

    /// `ν_σ(Â)`: the tilted mean of the centred observables.
    pub fn tilted_mean(&self, tilt: &EigenData) -> Vec<f64> {
        (0..self.dim()).map(|a| tilt.nu(&self.centered_on_grid(a)).re).collect()
    }

    /// Green–Kubo covariance of `Â` under the tilted measure `ν_σ`.
    ///
    /// Sums `ν(Ω_a Ω_b) + Σ_k [ν(Ω_a∘f^k Ω_b) + ν(Ω_b∘f^k Ω_a)]` with
    /// `Ω = Â − ν(Â)`, stopping once a term drops below `tol`.
    pub fn tilted_covariance(
        &self,
        sigma: &[f64],
        tilt: &EigenData,
        tol: f64,
        max_terms: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let op = self.operator(&Potential::RealLinear(sigma.to_vec()))?;
        let mean = self.tilted_mean(tilt);
        let omegas: Vec<Vec<f64>> =
            (0..d).map(|a| self.centered_on_grid(a).iter().map(|v| v - mean[a]).collect()).collect();
        let mh = tilt.m_of(&tilt.h);
        let inv_lambda = 1.0 / tilt.lambda;
        let mut cov = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                let prod: Vec<f64> = omegas[a].iter().zip(&omegas[b]).map(|(x, y)| x * y).collect();
                cov[a][b] = tilt.nu(&prod).re;
            }
        }
        // v_b^k = L̂^k(Ω_b h); term_k[a][b] = m(Ω_a v_b^k)/m(h).
        let mut v: Vec<Vec<Complex64>> = omegas.iter().map(|om| mul_real(om, &tilt.h)).collect();
        let mut converged = false;
        for _k in 1..=max_terms {
            for vb in v.iter_mut() {
                *vb = op.apply(vb).into_iter().map(|z| z * inv_lambda).collect();
            }
            let mut norm2 = 0.0;
            let mut term = vec![vec![0.0; d]; d];
            for a in 0..d {
                for b in 0..d {
                    term[a][b] = (tilt.m_of(&mul_real(&omegas[a], &v[b])) / mh).re;
                    norm2 += term[a][b] * term[a][b];
                }
            }
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += term[a][b] + term[b][a];
                }
            }
            if norm2.sqrt() < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SpectralGap(format!(
                "correlation terms still above {tol:e} after {max_terms} steps at θ={}",
                self.theta
            )));
        }
        Ok(cov)
    }
}

fn mul_real(a: &[f64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| y * *x).collect()
}

/// Leading eigendata of one operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenData {
    pub lambda: Complex64,
    /// `log λ`; real part is `log |λ|`.
    pub chi: Complex64,
    /// Right eigenvector on the grid.
    pub h: Vec<Complex64>,
    /// Left eigenvector as quadrature weights: `m(g) = Σ m_i g_i`.
    pub m: Vec<Complex64>,
    /// Ratio `|λ₂| / |λ₁|`.
    pub gap: f64,
    /// Set when `1 − gap < 10⁻³`.
    pub near_degenerate: bool,
}

impl EigenData {
    fn placeholder() -> Self {
        EigenData {
            lambda: Complex64::new(1.0, 0.0),
            chi: Complex64::new(0.0, 0.0),
            h: Vec::new(),
            m: Vec::new(),
            gap: 0.0,
            near_degenerate: false,
        }
    }

    pub fn m_of(&self, g: &[Complex64]) -> Complex64 {
        self.m.iter().zip(g).map(|(a, b)| a * b).sum()
    }

    /// `ν(g) = m(g h) / m(h)` for a real grid function `g`.
    pub fn nu(&self, g: &[f64]) -> Complex64 {
        self.m_of(&mul_real(g, &self.h)) / self.m_of(&self.h)
    }

    pub fn h_integral(&self) -> Complex64 {
        lebesgue(&self.h)
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Power iteration on `apply`; `None` if the residual stalls.
fn power_iteration(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    start: Vec<Complex64>,
) -> Option<(Complex64, Vec<Complex64>)> {
    let mut v = start;
    let nv = norm2(&v);
    if nv == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|z| *z /= nv);
    for it in 0..POWER_MAX_ITER {
        let w = apply(&v);
        let lam = dot_conj(&v, &w);
        let resid: f64 = w.iter().zip(&v).map(|(wi, vi)| (wi - lam * vi).norm_sqr()).sum::<f64>().sqrt();
        let nw = norm2(&w);
        if !nw.is_finite() || nw == 0.0 {
            return None;
        }
        if it > 2 && resid <= POWER_TOL * lam.norm().max(1e-300) {
            return Some((lam, w.into_iter().map(|z| z / lam).collect()));
        }
        v = w.into_iter().map(|z| z / nw).collect();
    }
    None
}

/// Dominant eigenvalue with right and left vectors (unnormalized).
fn dominant_pair(op: &TransferOperator) -> Result<(Complex64, Vec<Complex64>, Vec<Complex64>)> {
    let n = op.size();
    let ones = vec![Complex64::new(1.0, 0.0); n];
    let right = power_iteration(|v| op.apply(v), ones.clone());
    let left = power_iteration(|v| op.apply_transpose(v), ones);
    if let (Some((lam, h)), Some((_, m))) = (right, left) {
        return Ok((lam, h, m));
    }
    match op.dense() {
        Some(mat) if n <= DENSE_LIMIT => dense_dominant(mat),
        _ => Err(Error::NonConvergence(format!("power iteration did not converge at θ={}", op.theta))),
    }
}

/// Eigenvalues of a dense matrix sorted by decreasing modulus.
fn dense_eigenvalues(mat: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let schur = nalgebra::linalg::Schur::try_new(mat.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::NonConvergence("Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    let mut ev: Vec<Complex64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    Ok(ev)
}

fn inverse_iteration(mat: &DMatrix<Complex64>, mu: Complex64) -> Result<Vec<Complex64>> {
    let n = mat.nrows();
    let shifted = mat - DMatrix::<Complex64>::identity(n, n) * mu;
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, Complex64::new(1.0, 0.0));
    for _ in 0..4 {
        v = lu.solve(&v).ok_or_else(|| Error::NonConvergence("singular shift in inverse iteration".into()))?;
        let nv = v.norm();
        v /= Complex64::new(nv, 0.0);
    }
    Ok(v.iter().copied().collect())
}

fn dense_dominant(mat: &DMatrix<Complex64>) -> Result<(Complex64, Vec<Complex64>, Vec<Complex64>)> {
    let ev = dense_eigenvalues(mat)?;
    let lam = ev[0];
    let mu = lam * (1.0 + 1e-11) + Complex64::new(1e-14, 0.0);
    let h = inverse_iteration(mat, mu)?;
    let m = inverse_iteration(&mat.transpose(), mu)?;
    // Refine λ by a Rayleigh quotient on the converged vector.
    let mh: Vec<Complex64> = (mat * DVector::from_column_slice(&h)).iter().copied().collect();
    let lam = dot_conj(&h, &mh) / dot_conj(&h, &h);
    Ok((lam, h, m))
}

/// Normalize as for a real (or zero) potential: `∫h = 1`, `m(h) = 1`.
fn normalize_real(op: &TransferOperator, pair: (Complex64, Vec<Complex64>, Vec<Complex64>)) -> Result<EigenData> {
    let (lam, h, m) = pair;
    let ih = lebesgue(&h);
    if ih.norm() == 0.0 {
        return Err(Error::NonConvergence("leading eigenvector has zero integral".into()));
    }
    let h: Vec<Complex64> = h.into_iter().map(|z| z / ih).collect();
    let mut data = EigenData { lambda: lam, chi: lam.ln(), h, m, gap: f64::NAN, near_degenerate: false };
    let mh = data.m_of(&data.h);
    data.m.iter_mut().for_each(|z| *z /= mh);
    if !op.is_complex() {
        // Real operators: drop the round-off imaginary parts.
        data.lambda = Complex64::new(data.lambda.re, 0.0);
        data.chi = Complex64::new(data.lambda.re.ln(), 0.0);
    }
    Ok(data)
}

/// Ratio `|λ₂|/|λ₁|`, by dense eigensolve when small, else by deflated power iteration.
fn gap_estimate(op: &TransferOperator, data: &EigenData) -> Result<f64> {
    if let Some(mat) = op.dense() {
        if op.size() <= DENSE_LIMIT {
            let ev = dense_eigenvalues(mat)?;
            return Ok(if ev.len() > 1 { ev[1].norm() / ev[0].norm() } else { 0.0 });
        }
    }
    let n = op.size();
    let deflate = |v: Vec<Complex64>| -> Vec<Complex64> {
        let c = data.m_of(&v);
        v.into_iter().zip(&data.h).map(|(vi, hi)| vi - c * hi).collect()
    };
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| {
            Complex64::new((2.0 * PI * i as f64 / n as f64).cos() + 0.3 * (6.0 * PI * i as f64 / n as f64).sin(), 0.0)
        })
        .collect();
    v = deflate(v);
    let steps = 400;
    let mut log_norms = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    for _ in 0..=steps {
        let nv = norm2(&v);
        if nv == 0.0 {
            return Ok(0.0);
        }
        acc += nv.ln();
        log_norms.push(acc);
        v = v.into_iter().map(|z| z / nv).collect();
        v = deflate(op.apply(&v));
    }
    let half = steps / 2;
    let rate = ((log_norms[steps] - log_norms[half]) / (steps - half) as f64).exp();
    Ok((rate / data.lambda.norm()).min(1.0))
}

/// Assemble the operator described by `spec`.
pub fn build_operator(sys: &FastSlowSystem, spec: &OperatorSpec) -> Result<TransferOperator> {
    Fiber::new(sys, spec.theta, spec.discretization)?.operator(&spec.potential)
}

/// Leading eigentriple of an assembled operator, with gap estimate.
///
/// For real or zero potentials `h` has unit Lebesgue integral and `m(h) = 1`.
pub fn leading_eigentriple(op: &TransferOperator) -> Result<EigenData> {
    let mut data = normalize_real(op, dominant_pair(op)?)?;
    data.gap = gap_estimate(op, &data)?;
    data.near_degenerate = 1.0 - data.gap < 1e-3;
    Ok(data)
}

/// Eigentriple for `spec`; complex potentials are normalized by an 8-step
/// homotopy from the zero potential so that `m` continues Lebesgue.
pub fn eigentriple_for(sys: &FastSlowSystem, spec: &OperatorSpec) -> Result<EigenData> {
    let fiber = Fiber::new(sys, spec.theta, spec.discretization)?;
    let op = fiber.operator(&spec.potential)?;
    if !op.is_complex() {
        return leading_eigentriple(&op);
    }
    let mut prev = fiber.zero.clone();
    let steps = 8;
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let pot = match &spec.potential {
            Potential::Complex(vs) => Potential::Complex(vs * s),
            Potential::Custom(phi) => {
                let phi = phi.clone();
                Potential::Custom(Arc::new(move |x| phi(x) * s))
            }
            other => other.clone(),
        };
        let opk = fiber.operator(&pot)?;
        let (lam, h, m) = dominant_pair(&opk)?;
        let scale = prev.m_of(&h);
        let h: Vec<Complex64> = h.into_iter().map(|z| z / scale).collect();
        let mut data = EigenData { lambda: lam, chi: lam.ln(), h, m, gap: f64::NAN, near_degenerate: false };
        let mh = data.m_of(&data.h);
        data.m.iter_mut().for_each(|z| *z /= mh);
        prev = data;
    }
    prev.gap = gap_estimate(&op, &prev)?;
    prev.near_degenerate = 1.0 - prev.gap < 1e-3;
    Ok(prev)
}

/// `χ̂_A(σ, θ)` with the default bound `|σ| ≤ 5`.
pub fn chi_hat(sys: &FastSlowSystem, theta: f64, sigma: &[f64], disc: Discretization) -> Result<f64> {
    let norm = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if norm > DEFAULT_SIGMA_MAX {
        return Err(Error::Precondition(format!("|σ| = {norm} exceeds σ_max = {DEFAULT_SIGMA_MAX}")));
    }
    Fiber::new(sys, theta, disc)?.chi_hat(sigma)
}

/// Finite-difference and closed-form derivatives of `χ̂` along coordinate 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub fd1: f64,
    pub formula1: f64,
    pub fd2: f64,
    pub formula2: f64,
}

/// Compare central differences of `χ̂` (step 10⁻³) with `ν_σ(Â)` and the tilted Green–Kubo sum.
pub fn chi_derivative_check(
    sys: &FastSlowSystem,
    theta: f64,
    sigma: &[f64],
    disc: Discretization,
) -> Result<DerivativeCheck> {
    let fiber = Fiber::new(sys, theta, disc)?;
    let h = 1e-3;
    let shifted = |delta: f64| {
        let mut s = sigma.to_vec();
        s[0] += delta;
        fiber.chi_hat(&s)
    };
    let (cm, c0, cp) = (shifted(-h)?, shifted(0.0)?, shifted(h)?);
    let tilt = fiber.tilted(sigma)?;
    let formula1 = fiber.tilted_mean(&tilt)[0];
    let cov = fiber.tilted_covariance(sigma, &tilt, 1e-10, 200)?;
    Ok(DerivativeCheck {
        fd1: (cp - cm) / (2.0 * h),
        formula1,
        fd2: (cp - 2.0 * c0 + cm) / (h * h),
        formula2: cov[0][0],
    })
}

/// Grid function from real samples.
pub fn grid_from_real(v: &[f64]) -> Vec<Complex64> {
    real_vec(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Preset;

    #[test]
    fn cardinal_is_interpolating() {
        for n in [32usize, 64] {
            assert_eq!(cardinal(n, 0.0), 1.0);
            for k in 1..n {
                assert!(cardinal(n, k as f64 / n as f64).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn doubling_operator_fixes_constants_and_kills_cos() {
        let sys = Preset::DoublingCos.build(0.0).unwrap();
        let spec = OperatorSpec {
            theta: 0.0,
            potential: Potential::Zero,
            discretization: Discretization::Fourier { modes: 32 },
        };
        let op = build_operator(&sys, &spec).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); 32];
        for z in op.apply(&ones) {
            assert!((z - 1.0).norm() < 1e-13);
        }
        let c: Vec<Complex64> = op.nodes.iter().map(|&x| Complex64::new((2.0 * PI * x).cos(), 0.0)).collect();
        for z in op.apply(&c) {
            assert!(z.norm() < 1e-10);
        }
    }

    #[test]
    fn zero_potential_eigentriple_is_lebesgue_for_doubling() {
        let sys = Preset::DoublingCos.build(0.0).unwrap();
        let spec = OperatorSpec { theta: 0.3, potential: Potential::Zero, discretization: Discretization::default() };
        let e = leading_eigentriple(&build_operator(&sys, &spec).unwrap()).unwrap();
        assert!(e.chi.norm() < 1e-12);
        for z in &e.h {
            assert!((z - 1.0).norm() < 1e-10);
        }
        assert!(e.gap <= 0.5 + 1e-9, "gap {}", e.gap);
    }
}
