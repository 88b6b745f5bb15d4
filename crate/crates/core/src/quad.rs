//! Gauss–Legendre quadrature, adaptive subdivision and monotone bisection.
//!
//! Rules are computed once per node count in `f64` and cached for the life of
//! the process; integration itself runs in the caller's scalar type.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge on [{a}, {b}]: estimate {estimate:e}, error {error:e}")]
    NoConvergence {
        a: f64,
        b: f64,
        estimate: f64,
        error: f64,
    },
    #[error("non-finite integrand value on [{a}, {b}]")]
    NonFinite { a: f64, b: f64 },
}

/// Tolerances and rule sizes. All quadrature in the crate takes one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Nodes of the base Gauss–Legendre rule.
    pub nodes: usize,
    /// Absolute tolerance, distributed over subintervals by length.
    pub abs_tol: f64,
    /// Relative tolerance on each accepted subinterval.
    pub rel_tol: f64,
    /// Maximum bisection depth of a subinterval.
    pub max_depth: usize,
    /// Relative tolerance of monotone root finding.
    pub root_rel_tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            nodes: 64,
            abs_tol: 1e-12,
            rel_tol: 1e-13,
            max_depth: 48,
            root_rel_tol: 1e-10,
        }
    }
}

/// Value of an integral together with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub error: T,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the Legendre polynomial from the usual cosine guess.
    pub fn compute(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared cached rule with `n` nodes.
    pub fn cached(n: usize) -> &'static GaussLegendre {
        static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| Box::leak(Box::new(GaussLegendre::compute(n))))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn points<T: Real>(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * T::lit(x), half * T::lit(w)))
    }

    pub fn apply<T: Real, F: FnMut(T) -> T>(&self, mut f: F, a: T, b: T) -> T {
        self.points(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Legendre values `P_0(x) ..= P_{n}(x)`.
fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
        p.push(next);
    }
    p
}

/// Polynomial interpolation through Gauss–Legendre nodes on `[-1, 1]`.
///
/// `interp_row(x)` gives the Lagrange basis at `x` and `integral_row(x)` the
/// basis integrated from `-1` to `x`, both through the discrete Legendre
/// transform, so values at the nodes map to interpolated values and
/// indefinite integrals.
#[derive(Debug, Clone)]
pub struct NodalBasis {
    rule: &'static GaussLegendre,
    /// `scaled[l][m] = (2m+1)/2 · w_l · P_m(x_l)`
    scaled: Vec<Vec<f64>>,
}

impl NodalBasis {
    pub fn new(n: usize) -> Self {
        let rule = GaussLegendre::cached(n);
        let scaled = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| {
                legendre_all(n - 1, x)
                    .into_iter()
                    .enumerate()
                    .map(|(m, p)| (2 * m + 1) as f64 * 0.5 * w * p)
                    .collect()
            })
            .collect();
        Self { rule, scaled }
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    pub fn interp_row(&self, x: f64) -> Vec<f64> {
        let p = legendre_all(self.len() - 1, x);
        self.scaled
            .iter()
            .map(|row| row.iter().zip(&p).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn integral_row(&self, x: f64) -> Vec<f64> {
        let n = self.len();
        let p = legendre_all(n, x);
        let q: Vec<f64> = (0..n)
            .map(|m| {
                if m == 0 {
                    x + 1.0
                } else {
                    (p[m + 1] - p[m - 1]) / (2 * m + 1) as f64
                }
            })
            .collect();
        self.scaled
            .iter()
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `S[j][l] = ∫_{-1}^{x_j} L_l`.
    pub fn integration_matrix(&self) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = self.rule.nodes.iter().map(|&x| self.integral_row(x)).collect();
        rows
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Adaptive Gauss–Legendre integration of `f` over `[a, b]`.
pub fn integrate<T, F>(f: F, a: T, b: T, cfg: &QuadConfig) -> Result<Quadrature<T>, QuadError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    integrate_with_breaks(f, a, b, &[], cfg)
}

/// Adaptive integration over `[a, b]` with the interval split first at every
/// breakpoint strictly inside it. Use this for integrands with known kinks or
/// jumps (indicator edges, `|x|` at zero).
pub fn integrate_with_breaks<T, F>(
    mut f: F,
    a: T,
    b: T,
    breaks: &[T],
    cfg: &QuadConfig,
) -> Result<Quadrature<T>, QuadError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    if a == b {
        return Ok(Quadrature {
            value: T::zero(),
            error: T::zero(),
        });
    }
    if b < a {
        let q = integrate_with_breaks(f, b, a, breaks, cfg)?;
        return Ok(Quadrature {
            value: -q.value,
            error: q.error,
        });
    }
    let mut cuts: Vec<T> = Vec::with_capacity(breaks.len() + 2);
    cuts.push(a);
    cuts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    cuts.dedup();

    let rule = GaussLegendre::cached(cfg.nodes.max(2));
    let total = b - a;
    let abs_tol = T::lit(cfg.abs_tol).max(T::tol_floor());
    let rel_tol = T::lit(cfg.rel_tol).max(T::tol_floor());

    let mut value = T::zero();
    let mut error = T::zero();
    let mut failure: Option<(T, T)> = None;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let whole = rule.apply(&mut f, lo, hi);
        let mut stack = vec![(lo, hi, whole, 0usize)];
        while let Some((l, h, whole, depth)) = stack.pop() {
            let m = (l + h) * T::lit(0.5);
            let left = rule.apply(&mut f, l, m);
            let right = rule.apply(&mut f, m, h);
            let refined = left + right;
            if !refined.is_finite() {
                return Err(QuadError::NonFinite {
                    a: l.as_f64(),
                    b: h.as_f64(),
                });
            }
            let diff = (refined - whole).abs();
            let local = (abs_tol * (h - l) / total).max(rel_tol * refined.abs());
            if diff <= local || m <= l || m >= h {
                value += refined;
                error += diff;
            } else if depth >= cfg.max_depth {
                value += refined;
                error += diff;
                failure = Some((l, h));
            } else {
                stack.push((l, m, left, depth + 1));
                stack.push((m, h, right, depth + 1));
            }
        }
    }
    if let Some((l, h)) = failure {
        if error > abs_tol.max(rel_tol * value.abs()) {
            return Err(QuadError::NoConvergence {
                a: l.as_f64(),
                b: h.as_f64(),
                estimate: value.as_f64(),
                error: error.as_f64(),
            });
        }
    }
    Ok(Quadrature { value, error })
}

/// Integral of `f` over `[a, ∞)` through the map `x = a + u / (1 - u)`.
pub fn integrate_to_inf<T, F>(mut f: F, a: T, cfg: &QuadConfig) -> Result<Quadrature<T>, QuadError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let one = T::one();
    integrate_with_breaks(
        |u: T| {
            if u >= one {
                return T::zero();
            }
            let d = one - u;
            let x = a + u / d;
            let v = f(x) / (d * d);
            if v.is_finite() {
                v
            } else {
                T::zero()
            }
        },
        T::zero(),
        one,
        &[T::lit(0.5), T::lit(0.9), T::lit(0.99)],
        cfg,
    )
}

/// Boundary of a monotone predicate on `[lo, hi]`.
///
/// Requires `pred(lo)` true and `pred(hi)` false; returns `(l, h)` with
/// `pred(l)` true, `pred(h)` false and `h - l <= rel_tol * h`.
pub fn bisect_boundary<T, P>(mut pred: P, mut lo: T, mut hi: T, rel_tol: T) -> (T, T)
where
    T: Real,
    P: FnMut(T) -> bool,
{
    for _ in 0..2000 {
        if hi - lo <= rel_tol * hi.abs().max(lo.abs()) {
            break;
        }
        let mid = if lo > T::zero() && hi / lo > T::lit(16.0) {
            (lo * hi).sqrt()
        } else {
            (lo + hi) * T::lit(0.5)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodal_basis_integrates_polynomials() {
        let b = NodalBasis::new(8);
        let f = |x: f64| 3.0 * x.powi(5) - x * x + 0.5;
        let anti = |x: f64| 0.5 * x.powi(6) - x.powi(3) / 3.0 + 0.5 * x;
        let vals: Vec<f64> = b.nodes().iter().map(|&x| f(x)).collect();
        for &x in &[-0.9, -0.1, 0.37, 1.0] {
            let i: f64 = b.integral_row(x).iter().zip(&vals).map(|(a, v)| a * v).sum();
            assert!((i - (anti(x) - anti(-1.0))).abs() < 1e-13);
            let v: f64 = b.interp_row(x).iter().zip(&vals).map(|(a, v)| a * v).sum();
            assert!((v - f(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let gl = GaussLegendre::compute(8);
        let weights: f64 = gl.weights.iter().sum();
        assert!((weights - 2.0).abs() < 1e-14);
        // degree 15 is the highest exact degree for 8 nodes
        let v = gl.apply(|x: f64| x.powi(14) + x.powi(15), -1.0, 1.0);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let gl = GaussLegendre::compute(64);
        for w in gl.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..32 {
            assert!((gl.nodes[i] + gl.nodes[63 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_handles_kink_and_jump() {
        let cfg = QuadConfig::default();
        let q = integrate(|x: f64| x.abs(), -1.0, 2.0, &cfg).unwrap();
        assert!((q.value - 2.5).abs() < 1e-12);
        let q = integrate_with_breaks(
            |x: f64| if x > 0.3 { 1.0 } else { 0.0 },
            0.0,
            1.0,
            &[0.3],
            &cfg,
        )
        .unwrap();
        assert!((q.value - 0.7).abs() < 1e-14);
    }

    #[test]
    fn exponential_against_closed_form() {
        let cfg = QuadConfig::default();
        let q = integrate(|s: f64| (-s).exp(), 0.0, 1.0, &cfg).unwrap();
        assert!((q.value - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let q = integrate_to_inf(|s: f64| (-s).exp(), 1.0, &cfg).unwrap();
        assert!((q.value - (-1.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        let cfg = QuadConfig::default();
        let q = integrate(|s: f64| s, 1.0, 0.0, &cfg).unwrap();
        assert!((q.value + 0.5).abs() < 1e-15);
        assert_eq!(integrate(|s: f64| s, 1.0, 1.0, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn single_precision_quadrature_converges() {
        let cfg = QuadConfig::default();
        let q = integrate(|s: f32| s.cos(), 0.0, 1.0, &cfg).unwrap();
        assert!((q.value - 1f32.sin()).abs() < 1e-5);
    }

    #[test]
    fn bisection_brackets_boundary() {
        let (l, h) = bisect_boundary(|x: f64| x * x <= 2.0, 0.0, 4.0, 1e-12);
        assert!(l * l <= 2.0 && h * h > 2.0);
        assert!((l - 2f64.sqrt()).abs() < 1e-11);
    }
}
