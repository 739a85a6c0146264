//! Small numerical kernels shared across modules: root bracketing,
//! Chebyshev barycentric interpolation, Gauss–Legendre rules and a
//! periodic cubic spline.

use num_complex::Complex64;

/// Root of an increasing function on `[lo, hi]` by bisection down to `tol`.
///
/// Assumes `g(lo) <= 0 <= g(hi)`; the midpoint of the final bracket is returned.
pub fn bisect_increasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Signed distance `a - b` on the circle, in `[-1/2, 1/2)`.
pub fn circle_diff(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

/// Chebyshev–Lobatto grid on `[a, b]` with barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid {
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebGrid {
    pub fn new(a: f64, b: f64, n: usize) -> Self {
        assert!(n >= 2, "Chebyshev grid needs at least two nodes");
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        // Ascending order: cos(pi j/(n-1)) runs from 1 to -1, so flip it.
        let nodes = (0..n).map(|j| mid - half * (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos()).collect();
        let weights = (0..n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Self { a, b, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Barycentric interpolation of complex samples at `x`.
    pub fn interp(&self, values: &[Complex64], x: f64) -> Complex64 {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for ((&xj, &wj), &vj) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = x - xj;
            if d == 0.0 {
                return vj;
            }
            let t = wj / d;
            num += vj * t;
            den += t;
        }
        num / den
    }

    /// Barycentric interpolation of real samples at `x`.
    pub fn interp_real(&self, values: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xj, &wj), &vj) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = x - xj;
            if d == 0.0 {
                return vj;
            }
            let t = wj / d;
            num += vj * t;
            den += t;
        }
        num / den
    }

    /// Spectral derivative of the interpolant, sampled back on the nodes.
    pub fn diff(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut diag = 0.0;
            for (j, &vj) in values.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dij = (self.weights[j] / self.weights[i]) / (self.nodes[i] - self.nodes[j]);
                acc += vj * dij;
                diag -= dij;
            }
            out[i] = acc + values[i] * diag;
        }
        out
    }

    pub fn diff_real(&self, values: &[f64]) -> Vec<f64> {
        let c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.diff(&c).into_iter().map(|z| z.re).collect()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Cubic spline with period 1 through equally spaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl PeriodicSpline {
    /// `values[i]` is the sample at `i / values.len()`.
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        assert!(n >= 4, "periodic spline needs at least four nodes");
        let h = 1.0 / n as f64;
        // Cyclic tridiagonal system: M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) / h^2.
        let rhs: Vec<f64> =
            (0..n).map(|i| 6.0 * (values[(i + 1) % n] - 2.0 * values[i] + values[(i + n - 1) % n]) / (h * h)).collect();
        let second = solve_cyclic_tridiagonal(1.0, 4.0, 1.0, &rhs);
        Self { values, second }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        let h = 1.0 / n as f64;
        let s = t.rem_euclid(1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let u = s - i as f64;
        let j = (i + 1) % n;
        let (y0, y1) = (self.values[i], self.values[j]);
        let (m0, m1) = (self.second[i], self.second[j]);
        let a = 1.0 - u;
        a * y0 + u * y1 + h * h / 6.0 * ((a * a * a - a) * m0 + (u * u * u - u) * m1)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.values.len();
        let h = 1.0 / n as f64;
        let s = t.rem_euclid(1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let u = s - i as f64;
        let j = (i + 1) % n;
        let (y0, y1) = (self.values[i], self.values[j]);
        let (m0, m1) = (self.second[i], self.second[j]);
        let a = 1.0 - u;
        (y1 - y0) / h + h / 6.0 * (-(3.0 * a * a - 1.0) * m0 + (3.0 * u * u - 1.0) * m1)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.values
    }
}

/// Constant-coefficient cyclic tridiagonal solve via Sherman–Morrison.
fn solve_cyclic_tridiagonal(lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -diag;
    let mut d = vec![diag; n];
    d[0] = diag - gamma;
    d[n - 1] = diag - lower * upper / gamma;
    let x = solve_tridiagonal(lower, &d, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lower;
    let z = solve_tridiagonal(lower, &d, upper, &u);
    let factor = (x[0] + upper * x[n - 1] / gamma) / (1.0 + z[0] + upper * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

fn solve_tridiagonal(lower: f64, diag: &[f64], upper: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower * c[i - 1];
        c[i] = upper / m;
        d[i] = (rhs[i] - lower * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // degree 14 monomial: integral 2/15
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((i14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn chebyshev_interpolates_and_differentiates_smooth_functions() {
        let g = ChebGrid::new(0.2, 0.3, 32);
        let vals: Vec<Complex64> = g.nodes.iter().map(|&x| Complex64::new((3.0 * x).sin(), x * x)).collect();
        let z = g.interp(&vals, 0.2345);
        assert!((z.re - (3.0f64 * 0.2345).sin()).abs() < 1e-14);
        let d = g.diff(&vals);
        for (k, &x) in g.nodes.iter().enumerate() {
            assert!((d[k].re - 3.0 * (3.0 * x).cos()).abs() < 1e-9);
            assert!((d[k].im - 2.0 * x).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_spline_reproduces_trig_function() {
        let n = 256;
        let vals: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
        let s = PeriodicSpline::new(vals);
        for k in 0..97 {
            let t = k as f64 / 97.0 + 0.001;
            assert!((s.eval(t) - (2.0 * std::f64::consts::PI * t).sin()).abs() < 1e-9);
            let d = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * t).cos();
            assert!((s.derivative(t) - d).abs() < 1e-5);
        }
    }

    #[test]
    fn circle_diff_wraps() {
        assert!((circle_diff(0.95, 0.05) + 0.1).abs() < 1e-15);
        assert!((circle_diff(0.05, 0.95) - 0.1).abs() < 1e-15);
    }
}
