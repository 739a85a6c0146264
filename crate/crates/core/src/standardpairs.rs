//! Standard pairs, standard families and their weighted pushforwards.
//!
//! A pair is a short curve `θ = G(x)` over `[a, b]` carrying a density `ρ`.
//! Curves and densities are stored as samples on a 64-point
//! Chebyshev–Lobatto grid; integrals use 64-point Gauss–Legendre.
//! A curve is kept as a base value plus small offsets so that spectral
//! derivatives stay accurate on intervals of length `δ`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, ChebGrid};
use crate::system::{cone_bound, FastSlowSystem};

/// Samples per pair.
pub const PAIR_NODES: usize = 64;
const QUAD_NODES: usize = 64;
const CHECK_NODES: usize = 12;
const MAX_PAIRS: usize = 1_000_000;
const DEGENERATE_WEIGHT: f64 = 1e-14;

/// A complex function on the torus, with sampled `C¹` and `C²` norms.
#[derive(Clone)]
pub struct TorusPotential {
    pub f: Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync>,
    /// `sup|φ| + sup|∂ₓφ| + sup|∂_θφ|`.
    pub c1_norm: f64,
    /// `C¹` norm plus the sup of all second partials.
    pub c2_norm: f64,
}

impl std::fmt::Debug for TorusPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TorusPotential {{ c1_norm: {}, c2_norm: {} }}", self.c1_norm, self.c2_norm)
    }
}

impl TorusPotential {
    /// Norms are estimated by central differences on a 128×128 grid.
    pub fn new(f: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static) -> Self {
        let n = 128;
        let h = 1e-4;
        let (mut s0, mut sx, mut st, mut sxx, mut sxt, mut stt) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let (x, t) = (i as f64 / n as f64, j as f64 / n as f64);
                let c = f(x, t);
                s0 = s0.max(c.norm());
                sx = sx.max(((f(x + h, t) - f(x - h, t)) / (2.0 * h)).norm());
                st = st.max(((f(x, t + h) - f(x, t - h)) / (2.0 * h)).norm());
                sxx = sxx.max(((f(x + h, t) - c * 2.0 + f(x - h, t)) / (h * h)).norm());
                stt = stt.max(((f(x, t + h) - c * 2.0 + f(x, t - h)) / (h * h)).norm());
                let mixed = (f(x + h, t + h) - f(x + h, t - h) - f(x - h, t + h) + f(x - h, t - h)) / (4.0 * h * h);
                sxt = sxt.max(mixed.norm());
            }
        }
        let c1 = s0 + sx + st;
        Self { f: Arc::new(f), c1_norm: c1, c2_norm: c1 + sxx + sxt + stt }
    }

    pub fn zero() -> Self {
        Self { f: Arc::new(|_, _| Complex64::new(0.0, 0.0)), c1_norm: 0.0, c2_norm: 0.0 }
    }

    pub fn eval(&self, x: f64, theta: f64) -> Complex64 {
        (self.f)(x, theta)
    }
}

/// Constants of a standard family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBounds {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta: f64,
    pub d0: f64,
    pub d1: f64,
}

/// Tunables for [`PairBounds::for_system`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    /// Multiplier in `c2 ≥ C(1 + ‖φ‖_{C¹})` and `c3 ≥ C(1 + ‖φ‖_{C²} + ‖φ‖²_{C¹})`.
    pub c_const: f64,
    pub delta: f64,
    pub d0: f64,
    pub d1: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { c_const: 10.0, delta: 0.05, d0: 10.0, d1: 100.0 }
    }
}

impl PairBounds {
    /// Smallest admissible constants for potentials with the given norms.
    ///
    /// `c1` is the cone half-width; for complex potentials `δ` is reduced so
    /// that `c2·δ ≤ π/10`.
    pub fn for_system(sys: &FastSlowSystem, potentials: &[TorusPotential], complex: bool, cfg: &PairConfig) -> Self {
        let n1 = potentials.iter().map(|p| p.c1_norm).fold(0.0, f64::max);
        let n2 = potentials.iter().map(|p| p.c2_norm).fold(0.0, f64::max);
        let c2 = cfg.c_const * (1.0 + n1);
        let c3 = cfg.c_const * (1.0 + n2 + n1 * n1);
        let delta = if complex { cfg.delta.min(PI / (10.0 * c2)) } else { cfg.delta };
        Self { c1: cone_bound(sys), c2, c3, delta, d0: cfg.d0, d1: cfg.d1 }
    }
}

/// One standard pair on the lifted interval `[a, b]`, `0 ≤ a < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardPair {
    pub a: f64,
    pub b: f64,
    /// `G = g0 + curve`, sampled on the Chebyshev grid of `[a, b]`.
    pub g0: f64,
    pub curve: Vec<f64>,
    pub density: Vec<Complex64>,
    grid: ChebGrid,
}

impl StandardPair {
    /// Sample `G` and `ρ` on `[a, b]` and normalize `ρ` to unit integral.
    pub fn from_fns(a: f64, b: f64, g: impl Fn(f64) -> f64, rho: impl Fn(f64) -> Complex64) -> Result<Self> {
        if !(b > a && a.is_finite() && b.is_finite()) {
            return Err(Error::Precondition(format!("pair interval [{a}, {b}] is empty")));
        }
        let shift = a.floor();
        let (a, b) = (a - shift, b - shift);
        let grid = ChebGrid::new(a, b, PAIR_NODES);
        let g0 = g(0.5 * (a + b) + shift);
        let curve = grid.nodes.iter().map(|&x| g(x + shift) - g0).collect();
        let density: Vec<Complex64> = grid.nodes.iter().map(|&x| rho(x + shift)).collect();
        let mut pair = Self { a, b, g0, curve, density, grid };
        let mass = pair.integrate(|_, _, r| r);
        if !(mass.norm() > DEGENERATE_WEIGHT) || !mass.is_finite() {
            return Err(Error::InvalidDensity(format!("density integrates to {mass}")));
        }
        pair.density.iter_mut().for_each(|r| *r /= mass);
        Ok(pair)
    }

    /// `G ≡ θ₀` with uniform density.
    pub fn flat(a: f64, b: f64, theta0: f64) -> Result<Self> {
        Self::from_fns(a, b, |_| theta0, |_| Complex64::new(1.0, 0.0))
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn curve_at(&self, x: f64) -> f64 {
        self.g0 + self.grid.interp_real(&self.curve, x)
    }

    pub fn density_at(&self, x: f64) -> Complex64 {
        self.grid.interp(&self.density, x)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.grid.nodes
    }

    /// `∫ₐᵇ h(x, G(x), ρ(x)) dx` by Gauss–Legendre.
    pub fn integrate(&self, h: impl Fn(f64, f64, Complex64) -> Complex64) -> Complex64 {
        let (xs, ws) = gauss_legendre(QUAD_NODES);
        let half = 0.5 * (self.b - self.a);
        let mid = 0.5 * (self.b + self.a);
        xs.iter()
            .zip(&ws)
            .map(|(&u, &w)| {
                let x = mid + half * u;
                h(x, self.curve_at(x), self.density_at(x)) * (w * half)
            })
            .sum()
    }

    /// `μ_ℓ(g) = ∫ g(x, G(x)) ρ(x) dx` with `x` reduced mod 1.
    pub fn measure(&self, g: &(dyn Fn(f64, f64) -> Complex64 + Sync)) -> Complex64 {
        self.integrate(|x, t, r| g(x.rem_euclid(1.0), t) * r)
    }

    /// Check every invariant of a `(c1, c2, c3)`-standard pair at coupling `ε`.
    pub fn validate(&self, bounds: &PairBounds, epsilon: f64) -> Result<()> {
        let slack = |bound: f64| bound * (1.0 + 1e-9) + 1e-12;
        let len = self.length();
        if len < 0.5 * bounds.delta * (1.0 - 1e-9) || len > bounds.delta * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!("pair length {len} outside [δ/2, δ] with δ = {}", bounds.delta)));
        }
        // Derivatives come from a low-degree resample: on short pairs a
        // 64-node spectral derivative amplifies rounding like (n²/len)³.
        let check = ChebGrid::new(self.a, self.b, CHECK_NODES);
        let curve: Vec<f64> = check.nodes.iter().map(|&x| self.grid.interp_real(&self.curve, x)).collect();
        let density: Vec<Complex64> = check.nodes.iter().map(|&x| self.density_at(x)).collect();
        let d1 = check.diff_real(&curve);
        let d2 = check.diff_real(&d1);
        let d3 = check.diff_real(&d2);
        let sup = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let checks = [
            ("G'", sup(&d1), epsilon * bounds.c1),
            ("G''", sup(&d2), epsilon * bounds.c1 * bounds.d0),
            ("G'''", sup(&d3), epsilon * bounds.c1 * bounds.d1),
        ];
        for (name, value, bound) in checks {
            if value > slack(bound) {
                return Err(Error::Precondition(format!("‖{name}‖ = {value:e} exceeds {bound:e}")));
            }
        }
        let mass = self.integrate(|_, _, r| r);
        if (mass - 1.0).norm() > 1e-8 {
            return Err(Error::InvalidDensity(format!("∫ρ = {mass}")));
        }
        if self.density.iter().any(|r| r.norm() == 0.0 || !r.is_finite()) {
            return Err(Error::InvalidDensity("density vanishes or is not finite".into()));
        }
        let complex = self.density.iter().any(|r| r.im != 0.0);
        if !complex && self.density.iter().any(|r| r.re <= 0.0) {
            return Err(Error::InvalidDensity("real density must be positive".into()));
        }
        if complex && bounds.c2 * bounds.delta > PI / 10.0 * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "complex pair needs c2·δ ≤ π/10, got {}",
                bounds.c2 * bounds.delta
            )));
        }
        let r1 = check.diff(&density);
        let r2 = check.diff(&r1);
        let ratio = |v: &[Complex64]| v.iter().zip(&density).map(|(d, r)| (d / r).norm()).fold(0.0, f64::max);
        let (q1, q2) = (ratio(&r1), ratio(&r2));
        if q1 > slack(bounds.c2) {
            return Err(Error::InvalidDensity(format!("‖ρ'/ρ‖ = {q1} exceeds c2 = {}", bounds.c2)));
        }
        if q2 > slack(bounds.c3) {
            return Err(Error::InvalidDensity(format!("‖ρ''/ρ‖ = {q2} exceeds c3 = {}", bounds.c3)));
        }
        Ok(())
    }
}

/// Weighted collection of standard pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardFamily {
    pub pairs: Vec<StandardPair>,
    pub weights: Vec<Complex64>,
    pub bounds: PairBounds,
}

impl StandardFamily {
    pub fn single(pair: StandardPair, bounds: PairBounds) -> Self {
        Self { pairs: vec![pair], weights: vec![Complex64::new(1.0, 0.0)], bounds }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_weight(&self) -> Complex64 {
        self.weights.iter().sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.norm()).sum()
    }

    /// Validate every pair; probability families also need `ν ≥ 0`, `Σν = 1`.
    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if self.pairs.len() != self.weights.len() {
            return Err(Error::Interface("pairs and weights differ in length".into()));
        }
        for p in &self.pairs {
            p.validate(&self.bounds, epsilon)?;
        }
        Ok(())
    }

    pub fn is_probability(&self) -> bool {
        self.weights.iter().all(|w| w.im == 0.0 && w.re >= 0.0) && (self.total_weight() - 1.0).norm() <= 1e-8
    }
}

/// `μ_𝔏(g) = Σ_ℓ ν_ℓ ∫ g(x, G_ℓ(x)) ρ_ℓ(x) dx`.
pub fn family_measure(fam: &StandardFamily, g: &(dyn Fn(f64, f64) -> Complex64 + Sync)) -> Complex64 {
    fam.pairs.par_iter().zip(&fam.weights).map(|(p, &w)| w * p.measure(g)).sum()
}

/// `f_G(y) = f(y, G(y))` on the lift and its derivative.
fn curve_map(sys: &FastSlowSystem, pair: &StandardPair, dcurve: &[f64], y: f64) -> (f64, f64) {
    let th = pair.curve_at(y);
    let slope = pair.grid.interp_real(dcurve, y);
    let thr = th.rem_euclid(1.0);
    let value = (sys.f)(y, thr);
    let deriv = (sys.df_dx)(y, thr) + (sys.df_dtheta)(y, thr) * slope;
    (value, deriv)
}

/// Solve `f_G(y) = t` for `y ∈ [a, b]` by bisection and Newton polish.
fn curve_inverse(sys: &FastSlowSystem, pair: &StandardPair, dcurve: &[f64], t: f64) -> f64 {
    let (mut lo, mut hi) = (pair.a, pair.b);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if curve_map(sys, pair, dcurve, mid).0 < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..2 {
        let (v, d) = curve_map(sys, pair, dcurve, y);
        let next = y - (v - t) / d;
        if (next - y).abs() < 1e-12 {
            y = next;
        }
    }
    y.clamp(pair.a, pair.b)
}

fn decompose_pair(
    sys: &FastSlowSystem,
    pair: &StandardPair,
    weight: Complex64,
    phi: &TorusPotential,
    delta: f64,
) -> Result<Vec<(StandardPair, Complex64)>> {
    let eps = sys.epsilon;
    let dcurve = pair.grid.diff_real(&pair.curve);
    let (start, _) = curve_map(sys, pair, &dcurve, pair.a);
    let (end, _) = curve_map(sys, pair, &dcurve, pair.b);
    let pieces = ((end - start) / delta).ceil().max(1.0) as usize;
    let step = (end - start) / pieces as f64;
    let mid_y = 0.5 * (pair.a + pair.b);
    let omega_mid = sys.eval_omega(mid_y, pair.curve_at(mid_y));
    let mut out = Vec::with_capacity(pieces);
    for j in 0..pieces {
        let (lo, hi) = (start + j as f64 * step, if j + 1 == pieces { end } else { start + (j + 1) as f64 * step });
        let shift = lo.floor();
        let grid = ChebGrid::new(lo - shift, hi - shift, PAIR_NODES);
        let mut curve = Vec::with_capacity(PAIR_NODES);
        let mut dens = Vec::with_capacity(PAIR_NODES);
        for &x in &grid.nodes {
            let y = curve_inverse(sys, pair, &dcurve, x + shift);
            let th = pair.curve_at(y);
            let (_, fprime) = curve_map(sys, pair, &dcurve, y);
            let w = sys.eval_omega(y, th);
            curve.push(pair.grid.interp_real(&pair.curve, y) + eps * (w - omega_mid));
            dens.push(phi.eval(y.rem_euclid(1.0), th).exp() * pair.density_at(y) / fprime);
        }
        let mut piece =
            StandardPair { a: grid.a, b: grid.b, g0: pair.g0 + eps * omega_mid, curve, density: dens, grid };
        let nu = piece.integrate(|_, _, r| r);
        if !(nu.norm() >= DEGENERATE_WEIGHT) {
            return Err(Error::DecompositionDegenerate(nu.norm()));
        }
        piece.density.iter_mut().for_each(|r| *r /= nu);
        out.push((piece, weight * nu));
    }
    Ok(out)
}

/// Decompose `F_{ε*,φ} μ_𝔏` into standard pairs.
///
/// Each image interval `[f_G(a), f_G(b)]` is cut into `⌈len/δ⌉` equal pieces;
/// on piece `j` the new curve is `(G + εω_G)∘φ_j` and the unnormalized density
/// `e^{φ_G∘φ_j} ρ∘φ_j φ_j'`, where `φ_j` is the inverse of `f_G` on that piece.
pub fn pushforward_decompose(
    fam: &StandardFamily,
    phi: &TorusPotential,
    sys: &FastSlowSystem,
) -> Result<StandardFamily> {
    let b = &fam.bounds;
    let c_needed = b.c2 / (1.0 + phi.c1_norm);
    if c_needed < 1.0 || b.c3 < 1.0 + phi.c2_norm + phi.c1_norm * phi.c1_norm {
        return Err(Error::Precondition(format!(
            "c2 = {}, c3 = {} too small for a potential with C¹ norm {} and C² norm {}",
            b.c2, b.c3, phi.c1_norm, phi.c2_norm
        )));
    }
    let parts: Vec<Vec<(StandardPair, Complex64)>> = fam
        .pairs
        .par_iter()
        .zip(&fam.weights)
        .map(|(p, &w)| decompose_pair(sys, p, w, phi, b.delta))
        .collect::<Result<_>>()?;
    let count: usize = parts.iter().map(|p| p.len()).sum();
    if count > MAX_PAIRS {
        return Err(Error::Resource(format!("decomposition would hold {count} pairs")));
    }
    let (pairs, weights) = parts.into_iter().flatten().unzip();
    let out = StandardFamily { pairs, weights, bounds: fam.bounds };
    out.validate(sys.epsilon)?;
    Ok(out)
}

/// `n` successive decompositions with potential `k` at step `k`.
///
/// Checks `Σ|ν| ≤ exp(Σ_k max Re φ_k)·e^{2 c2 δ}` on the result.
pub fn iterate_family(
    fam: &StandardFamily,
    potentials: &[TorusPotential],
    n: usize,
    sys: &FastSlowSystem,
) -> Result<StandardFamily> {
    if potentials.len() < n {
        return Err(Error::Interface(format!("{} potentials for {n} steps", potentials.len())));
    }
    let mut cur = fam.clone();
    let mut log_bound = 2.0 * fam.bounds.c2 * fam.bounds.delta + fam.total_variation().ln();
    for phi in &potentials[..n] {
        let mut max_re = f64::NEG_INFINITY;
        for i in 0..128 {
            for j in 0..128 {
                max_re = max_re.max(phi.eval(i as f64 / 128.0, j as f64 / 128.0).re);
            }
        }
        // Pad the sampled maximum by the Lipschitz bound over half a grid cell.
        log_bound += max_re + phi.c1_norm / 128.0;
        cur = pushforward_decompose(&cur, phi, sys)?;
    }
    let tv = cur.total_variation();
    if tv.ln() > log_bound + 1e-12 {
        return Err(Error::Precondition(format!("Σ|ν| = {tv} exceeds the weight bound e^{log_bound}")));
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Preset;

    fn setup(phi: &TorusPotential, complex: bool) -> (FastSlowSystem, StandardFamily) {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let bounds = PairBounds::for_system(&sys, std::slice::from_ref(phi), complex, &PairConfig::default());
        let pair = StandardPair::flat(0.31, 0.31 + bounds.delta, 0.4).unwrap();
        (sys, StandardFamily::single(pair, bounds))
    }

    #[test]
    fn flat_pair_measure_of_a_fourier_mode() {
        let pair = StandardPair::flat(0.2, 0.25, 0.3).unwrap();
        let g = |x: f64, _t: f64| Complex64::from_polar(1.0, 2.0 * PI * x);
        let i2pi = Complex64::new(0.0, 2.0 * PI);
        let exact = ((i2pi * 0.25).exp() - (i2pi * 0.2).exp()) / (i2pi * 0.05);
        assert!((pair.measure(&g) - exact).norm() < 1e-10);
    }

    #[test]
    fn zero_potential_keeps_a_probability_family() {
        let phi = TorusPotential::zero();
        let (sys, fam) = setup(&phi, false);
        fam.validate(sys.epsilon).unwrap();
        let out = pushforward_decompose(&fam, &phi, &sys).unwrap();
        assert!(out.len() == 2 || out.len() == 3);
        assert!(out.is_probability());
        for p in &out.pairs {
            assert!(p.density.iter().all(|r| r.im.abs() <= 1e-12));
        }
    }

    #[test]
    fn measure_identity_for_real_and_complex_potentials() {
        let cases = [
            (TorusPotential::new(|x, _| Complex64::new(0.1 * (2.0 * PI * x).cos(), 0.0)), false),
            (
                TorusPotential::new(|x, t| {
                    Complex64::new(0.0, 0.5 * ((2.0 * PI * x).cos() + 0.5 * (2.0 * PI * t).sin()))
                }),
                true,
            ),
        ];
        for (phi, complex) in cases {
            let (sys, fam) = setup(&phi, complex);
            let out = pushforward_decompose(&fam, &phi, &sys).unwrap();
            let g = |x: f64, _t: f64| Complex64::from_polar(1.0, 2.0 * PI * x);
            let lhs = family_measure(&out, &g);
            let s = &sys;
            let pulled = |x: f64, t: f64| {
                let (fx, nt) = (s.eval_f(x, t).rem_euclid(1.0), t + s.epsilon * s.eval_omega(x, t));
                phi.eval(x, t).exp() * g(fx, nt)
            };
            let rhs = family_measure(&fam, &pulled);
            assert!((lhs - rhs).norm() < 1e-8, "{lhs} vs {rhs}");
        }
    }
    #[test]
    fn five_zero_steps_preserve_mass() {
        let phi = TorusPotential::zero();
        let (sys, fam) = setup(&phi, false);
        let out = iterate_family(&fam, &vec![phi; 5], 5, &sys).unwrap();
        assert!((out.total_weight() - 1.0).norm() <= 1e-7);
        assert!(out.is_probability());
    }

    #[test]
    fn birkhoff_identity_against_direct_quadrature() {
        let phi = TorusPotential::new(|x, _| Complex64::new(0.1 * (2.0 * PI * x).cos(), 0.0));
        let (sys, fam) = setup(&phi, false);
        let n = 5;
        let out = iterate_family(&fam, &vec![phi.clone(); n], n, &sys).unwrap();
        let lhs = family_measure(&out, &|_, _| Complex64::new(1.0, 0.0));
        let pair = &fam.pairs[0];
        let m = 100_000;
        let h = pair.length() / m as f64;
        let mut rhs = 0.0;
        for i in 0..m {
            let mut x = (pair.a + (i as f64 + 0.5) * h).rem_euclid(1.0);
            let mut t = 0.4;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += phi.eval(x, t).re;
                let nx = sys.eval_f(x, t).rem_euclid(1.0);
                t += sys.epsilon * sys.eval_omega(x, t);
                x = nx;
            }
            rhs += sum.exp() / pair.length() * h;
        }
        assert!((lhs.re - rhs).abs() < 1e-6 && lhs.im.abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn imaginary_potential_weights_decay() {
        let sys = Preset::DoublingCos.build(1e-3).unwrap();
        let s = sys.clone();
        let phi = TorusPotential::new(move |x, t| Complex64::new(0.0, 5.0 * s.eval_omega(x, t)));
        let bounds = PairBounds::for_system(&sys, std::slice::from_ref(&phi), true, &PairConfig::default());
        let pair = StandardPair::flat(0.31, 0.31 + bounds.delta, 0.4).unwrap();
        let mut fam = StandardFamily::single(pair, bounds);
        // |Σν| stays near 1 until the image of the pair covers the circle,
        // then oscillates downward; only the bound and net decay are checked.
        for _ in 0..10 {
            fam = pushforward_decompose(&fam, &phi, &sys).unwrap();
            assert!(fam.total_weight().norm() <= 1.0 + 1e-8);
        }
        let w = fam.total_weight().norm();
        assert!(w < 0.95, "{w}");
    }
}
