//! Fast-slow skew products on the two-torus.
//!
//! A system is the map `F(x, θ) = (f(x, θ) mod 1, θ + ε ω(x, θ))` together with
//! passive observables `A[1..]` that accumulate as `ζ' = ζ + ε A(x, θ)`.
//! The fast coordinate lives in `[0, 1)`; the slow one is kept on the real line
//! and reduced mod 1 only when an evaluator is called.

mod presets;
mod shadow;

pub use presets::Preset;
pub use shadow::{shadow_averaged, shadow_reconstruct, ShadowConfig, ShadowReport};

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// A real function of `(x, θ)`, called with `θ` already reduced mod 1.
pub type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Wrap a closure as an [`Evaluator`].
pub fn evaluator(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Evaluator {
    Arc::new(f)
}

/// Raw ingredients of a system before certification.
#[derive(Clone)]
pub struct SystemParts {
    pub name: String,
    /// Lift of the fast map: `f(x + 1, θ) = f(x, θ) + degree`.
    pub f: Evaluator,
    pub df_dx: Evaluator,
    pub df_dtheta: Evaluator,
    pub d2f_dx2: Evaluator,
    pub d2f_dxdtheta: Evaluator,
    pub omega: Evaluator,
    pub domega_dx: Evaluator,
    pub domega_dtheta: Evaluator,
    /// Passive observables `A[1..]`.
    pub passive: Vec<Evaluator>,
}

/// A certified fast-slow system.
#[derive(Clone)]
pub struct FastSlowSystem {
    pub name: String,
    pub f: Evaluator,
    pub df_dx: Evaluator,
    pub df_dtheta: Evaluator,
    pub d2f_dx2: Evaluator,
    pub d2f_dxdtheta: Evaluator,
    pub omega: Evaluator,
    pub domega_dx: Evaluator,
    pub domega_dtheta: Evaluator,
    /// Observable bundle with `A[0] = ω`.
    pub observables: Vec<Evaluator>,
    pub epsilon: f64,
    lambda_min: f64,
    degree: i64,
    sup_abs_a: Vec<f64>,
    sup_abs_domega_dx: f64,
}

impl fmt::Debug for FastSlowSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FastSlowSystem")
            .field("name", &self.name)
            .field("epsilon", &self.epsilon)
            .field("dim", &self.dim())
            .field("lambda_min", &self.lambda_min)
            .field("degree", &self.degree)
            .finish()
    }
}

const CERT_GRID: usize = 1024;
const SUP_GRID: usize = 256;
const PERIOD_TOL: f64 = 1e-10;

impl FastSlowSystem {
    /// Certify expansion, periodicity and finiteness, then build the system.
    pub fn new(parts: SystemParts, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidSystem(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        let SystemParts { name, f, df_dx, df_dtheta, d2f_dx2, d2f_dxdtheta, omega, domega_dx, domega_dtheta, passive } =
            parts;
        let mut observables = vec![omega.clone()];
        observables.extend(passive);

        let degree_raw = f(1.0, 0.0) - f(0.0, 0.0);
        let degree = degree_raw.round() as i64;
        if !degree_raw.is_finite() || (degree_raw - degree as f64).abs() > PERIOD_TOL || degree < 2 {
            return Err(Error::InvalidSystem(format!("f(1,θ) - f(0,θ) = {degree_raw} is not an integer degree >= 2")));
        }

        // Periodicity probes on the raw evaluators.
        for k in 0..16 {
            let s = k as f64 / 16.0 + 0.013;
            let df = f(1.0, s) - f(0.0, s) - degree as f64;
            let dft = f(s, 1.0) - f(s, 0.0);
            if df.abs() > PERIOD_TOL || dft.abs() > PERIOD_TOL {
                return Err(Error::InvalidSystem(format!("f is not a degree-{degree} lift periodic in θ near {s}")));
            }
            for (i, a) in observables.iter().enumerate() {
                if (a(1.0, s) - a(0.0, s)).abs() > PERIOD_TOL || (a(s, 1.0) - a(s, 0.0)).abs() > PERIOD_TOL {
                    return Err(Error::InvalidSystem(format!("observable A[{i}] is not periodic near {s}")));
                }
            }
        }

        let h = 1.0 / CERT_GRID as f64;
        let mut min_dfx = f64::INFINITY;
        for j in 0..CERT_GRID {
            let theta = j as f64 * h;
            for i in 0..CERT_GRID {
                let x = i as f64 * h;
                let v = df_dx(x, theta);
                if !v.is_finite() {
                    return Err(Error::NumericDomain { field: "df_dx".into(), x, theta });
                }
                min_dfx = min_dfx.min(v);
            }
        }

        let hs = 1.0 / SUP_GRID as f64;
        let mut sup_xx: f64 = 0.0;
        let mut sup_xt: f64 = 0.0;
        let mut sup_wx: f64 = 0.0;
        let mut sup_a = vec![0.0f64; observables.len()];
        for j in 0..SUP_GRID {
            let theta = j as f64 * hs;
            for i in 0..SUP_GRID {
                let x = i as f64 * hs;
                let vals = [
                    ("f", f(x, theta)),
                    ("df_dtheta", df_dtheta(x, theta)),
                    ("d2f_dx2", d2f_dx2(x, theta)),
                    ("d2f_dxdtheta", d2f_dxdtheta(x, theta)),
                    ("domega_dx", domega_dx(x, theta)),
                    ("domega_dtheta", domega_dtheta(x, theta)),
                ];
                for (field, v) in vals {
                    if !v.is_finite() {
                        return Err(Error::NumericDomain { field: field.into(), x, theta });
                    }
                }
                sup_xx = sup_xx.max(vals[2].1.abs());
                sup_xt = sup_xt.max(vals[3].1.abs());
                sup_wx = sup_wx.max(vals[4].1.abs());
                for (k, a) in observables.iter().enumerate() {
                    let v = a(x, theta);
                    if !v.is_finite() {
                        return Err(Error::NumericDomain { field: format!("A[{k}]"), x, theta });
                    }
                    sup_a[k] = sup_a[k].max(v.abs());
                }
            }
        }
        // Every point is within h/2 of a grid node in each coordinate.
        let lambda_min = min_dfx - 0.5 * h * (sup_xx + sup_xt);
        if lambda_min <= 1.0 {
            return Err(Error::InvalidSystem(format!("certified lambda_min = {lambda_min} is not > 1")));
        }

        Ok(Self {
            name,
            f,
            df_dx,
            df_dtheta,
            d2f_dx2,
            d2f_dxdtheta,
            omega,
            domega_dx,
            domega_dtheta,
            observables,
            epsilon,
            lambda_min,
            degree,
            sup_abs_a: sup_a,
            sup_abs_domega_dx: sup_wx,
        })
    }

    /// Same system with a different coupling.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let mut s = self.clone();
        s.epsilon = epsilon;
        s
    }

    /// Append passive observables `A[d..]`.
    pub fn with_passive(&self, extra: Vec<Evaluator>) -> Self {
        let mut s = self.clone();
        for a in extra {
            let mut sup: f64 = 0.0;
            for j in 0..SUP_GRID {
                for i in 0..SUP_GRID {
                    sup = sup.max(a(i as f64 / SUP_GRID as f64, j as f64 / SUP_GRID as f64).abs());
                }
            }
            s.sup_abs_a.push(sup);
            s.observables.push(a);
        }
        s
    }

    /// Number of observables `d`.
    pub fn dim(&self) -> usize {
        self.observables.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    /// Sampled sup of `|A[i]|` over the torus.
    pub fn sup_abs_a(&self) -> &[f64] {
        &self.sup_abs_a
    }

    /// Sampled sup of `|∂ₓω|` over the torus.
    pub fn sup_abs_domega_dx(&self) -> f64 {
        self.sup_abs_domega_dx
    }

    #[inline]
    pub fn eval_f(&self, x: f64, theta: f64) -> f64 {
        (self.f)(x, theta.rem_euclid(1.0))
    }

    #[inline]
    pub fn eval_omega(&self, x: f64, theta: f64) -> f64 {
        (self.omega)(x, theta.rem_euclid(1.0))
    }

    #[inline]
    pub fn eval_a(&self, i: usize, x: f64, theta: f64) -> f64 {
        (self.observables[i])(x, theta.rem_euclid(1.0))
    }

    /// The circle map `f(·, θ)` with its inverse branches.
    pub fn fiber(&self, theta: f64) -> FiberMap<'_> {
        let theta = theta.rem_euclid(1.0);
        FiberMap { sys: self, theta, f0: (self.f)(0.0, theta), degree: self.degree as f64 }
    }

    /// Advance `(x, z)` by one step in place.
    ///
    /// With `dither`, a fair random bit is added to the new `x` at weight 2⁻⁵³.
    /// This refills the low-order bit that exact arithmetic shifts out (the
    /// doubling map collapses to 0 in about 53 steps otherwise). The sum is
    /// exact in binary64, so for the doubling map on the 2⁻⁵³ lattice the
    /// result is an exact Bernoulli shift with uniform stationary law.
    #[inline]
    pub fn step_in_place(&self, x: &mut f64, z: &mut [f64], dither: Option<&mut CounterRng>) -> Result<()> {
        let theta = z[0].rem_euclid(1.0);
        let fx = (self.f)(*x, theta);
        if !fx.is_finite() {
            return Err(Error::NumericDomain { field: "f".into(), x: *x, theta: z[0] });
        }
        let w = (self.omega)(*x, theta);
        if !w.is_finite() {
            return Err(Error::NumericDomain { field: "omega".into(), x: *x, theta: z[0] });
        }
        for i in 1..z.len() {
            let a = (self.observables[i])(*x, theta);
            if !a.is_finite() {
                return Err(Error::NumericDomain { field: format!("A[{i}]"), x: *x, theta: z[0] });
            }
            z[i] += self.epsilon * a;
        }
        z[0] += self.epsilon * w;
        let mut nx = fx.rem_euclid(1.0);
        if let Some(rng) = dither {
            nx += (rng.next_u64() >> 63) as f64 * (1.0 / 9_007_199_254_740_992.0);
        }
        if nx >= 1.0 {
            nx -= 1.0;
        }
        *x = nx;
        Ok(())
    }
}

/// One state of the skew product: fast `x ∈ [0,1)`, slow `z = (θ, ζ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub x: f64,
    pub z: Vec<f64>,
}

impl TrajectoryState {
    /// State with `θ = theta` and all passive coordinates at zero.
    pub fn new(sys: &FastSlowSystem, x: f64, theta: f64) -> Self {
        let mut z = vec![0.0; sys.dim()];
        z[0] = theta;
        Self { x: x.rem_euclid(1.0), z }
    }

    pub fn theta(&self) -> f64 {
        self.z[0]
    }

    fn validate(&self, sys: &FastSlowSystem) -> Result<()> {
        if self.z.len() != sys.dim() {
            return Err(Error::Interface(format!(
                "state has {} slow coordinates, system has {}",
                self.z.len(),
                sys.dim()
            )));
        }
        if !(self.x.is_finite() && (0.0..1.0).contains(&self.x)) || self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("state must be finite with x in [0,1)".into()));
        }
        Ok(())
    }
}

/// One application of `F_ε` including passive variables.
pub fn step(sys: &FastSlowSystem, s: &TrajectoryState) -> Result<TrajectoryState> {
    s.validate(sys)?;
    let mut out = s.clone();
    sys.step_in_place(&mut out.x, &mut out.z, None)?;
    Ok(out)
}

/// The orbit `s0, F(s0), …, Fⁿ(s0)` in exact arithmetic.
pub fn simulate(sys: &FastSlowSystem, s0: &TrajectoryState, n: usize) -> Result<Vec<TrajectoryState>> {
    simulate_inner(sys, s0, n, None)
}

/// As [`simulate`], with low-order dithering of `x` drawn from `rng`.
pub fn simulate_dithered(
    sys: &FastSlowSystem,
    s0: &TrajectoryState,
    n: usize,
    rng: &mut CounterRng,
) -> Result<Vec<TrajectoryState>> {
    simulate_inner(sys, s0, n, Some(rng))
}

fn simulate_inner(
    sys: &FastSlowSystem,
    s0: &TrajectoryState,
    n: usize,
    mut rng: Option<&mut CounterRng>,
) -> Result<Vec<TrajectoryState>> {
    s0.validate(sys)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(s0.clone());
    let mut cur = s0.clone();
    for _ in 0..n {
        sys.step_in_place(&mut cur.x, &mut cur.z, rng.as_deref_mut())?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Result of the slope recursion along an orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeReport {
    pub u: Vec<f64>,
    pub bound: f64,
    pub cone_ok: bool,
    pub first_violation: Option<usize>,
}

impl SlopeReport {
    /// Turn a cone violation into an error.
    pub fn require_cone(&self) -> Result<()> {
        match self.first_violation {
            Some(k) => Err(Error::ConeViolation { k, value: self.u[k], bound: self.bound }),
            None => Ok(()),
        }
    }
}

/// Cone half-width `‖∂ₓω‖∞ / (λ_min − 1)` with a 10% margin.
pub fn cone_bound(sys: &FastSlowSystem) -> f64 {
    1.1 * sys.sup_abs_domega_dx() / (sys.lambda_min() - 1.0)
}

/// Push the slope `u₀ = 0` of the horizontal direction along `trajectory`.
///
/// `u_{k+1} = (∂ₓω + (1 + ε∂_θω) u_k) / (∂ₓf + ε ∂_θf u_k)` at `(x_k, θ_k)`.
pub fn slope_recursion(sys: &FastSlowSystem, trajectory: &[TrajectoryState]) -> SlopeReport {
    let bound = cone_bound(sys);
    let eps = sys.epsilon;
    let mut u = Vec::with_capacity(trajectory.len());
    let mut first_violation = None;
    if trajectory.is_empty() {
        return SlopeReport { u, bound, cone_ok: true, first_violation };
    }
    let mut cur = 0.0;
    u.push(cur);
    for (k, s) in trajectory[..trajectory.len() - 1].iter().enumerate() {
        let th = s.z[0].rem_euclid(1.0);
        let num = (sys.domega_dx)(s.x, th) + (1.0 + eps * (sys.domega_dtheta)(s.x, th)) * cur;
        let den = (sys.df_dx)(s.x, th) + eps * (sys.df_dtheta)(s.x, th) * cur;
        cur = num / den;
        u.push(cur);
        if first_violation.is_none() && !(cur.abs() <= bound) {
            first_violation = Some(k + 1);
        }
    }
    SlopeReport { u, bound, cone_ok: first_violation.is_none(), first_violation }
}

/// The circle map `f(·, θ)` at a frozen slow coordinate.
#[derive(Clone, Copy)]
pub struct FiberMap<'a> {
    sys: &'a FastSlowSystem,
    pub theta: f64,
    f0: f64,
    degree: f64,
}

impl FiberMap<'_> {
    #[inline]
    pub fn lift(&self, y: f64) -> f64 {
        (self.sys.f)(y, self.theta)
    }

    #[inline]
    pub fn deriv(&self, y: f64) -> f64 {
        (self.sys.df_dx)(y, self.theta)
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    /// Real `y` with `lift(y) = t`: Newton safeguarded by the bracket `[lo, lo + 1]`.
    pub fn inverse(&self, t: f64) -> f64 {
        let mut lo = ((t - self.f0) / self.degree).floor();
        let mut hi = lo + 1.0;
        let mut y = lo + (t - self.lift(lo)) / self.degree;
        for _ in 0..100 {
            let r = self.lift(y) - t;
            if r == 0.0 {
                return y;
            }
            if r < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let mut next = y - r / self.deriv(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-16 * (1.0 + y.abs()) || hi - lo <= 1e-16 * (1.0 + y.abs()) {
                return next;
            }
            y = next;
        }
        y
    }

    /// Real `y` with `lift(y) = t`, by monotone bisection to 10⁻¹² and one Newton polish.
    pub fn inverse_bisect(&self, t: f64) -> f64 {
        let lo = ((t - self.f0) / self.degree).floor();
        let y = crate::numerics::bisect_increasing(|y| self.lift(y) - t, lo, lo + 1.0, 1e-12);
        let polished = y - (self.lift(y) - t) / self.deriv(y);
        if (polished - y).abs() <= 1e-11 {
            polished
        } else {
            y
        }
    }

    /// Inverse branch `k ∈ 0..degree` evaluated at lifted point `x`: `f⁻¹(x + k)`.
    ///
    /// Branch `k` is smooth and increasing in `x` on the whole line, so
    /// compositions of branches are contractions suitable for bisection.
    #[inline]
    pub fn branch(&self, k: usize, x: f64) -> f64 {
        self.inverse(x + k as f64)
    }

    /// All preimages of `x ∈ [0,1)` reduced to `[0,1)`, with `1/f'` at each.
    pub fn preimages(&self, x: f64) -> Vec<(f64, f64)> {
        (0..self.degree())
            .map(|k| {
                let y = self.branch(k, x);
                (y.rem_euclid(1.0), 1.0 / self.deriv(y))
            })
            .collect()
    }
}
