//! Both sides of the jump Itô formulas evaluated pathwise.
//!
//! On a finite-activity window the path is a drift plus finitely many jumps,
//! so every formula holds exactly path by path and the residual only measures
//! quadrature error. Time integrals run segment by segment between jumps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrand::{DetIntegrand, IntegrandError};
use crate::integrate::{self, CadlagPath, IntegrateError};
use crate::measure::{LevyMeasure, MeasureError, Shell};
use crate::prm::{PointConfiguration, SpaceBox};
use crate::quad::{self, GaussLegendre, QuadConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ItoError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Integrand(#[from] IntegrandError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid function: {0}")]
    InvalidFn(String),
}

pub type Result<T, E = ItoError> = std::result::Result<T, E>;

/// `C²` test functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "fn", rename_all = "snake_case")]
pub enum SmoothFn<T> {
    /// `Σ cₖ xᵏ`
    Poly { coeffs: Vec<T> },
    /// `e^{scale·x}`
    Exp { scale: T },
    /// `cos(scale·x)`
    Cos { scale: T },
    /// `sin(scale·x)`
    Sin { scale: T },
    /// `|x|^p`, `p ≥ 2`
    AbsPow { p: T },
}

impl<T: Real> SmoothFn<T> {
    pub fn identity() -> Self {
        SmoothFn::Poly {
            coeffs: vec![T::zero(), T::one()],
        }
    }

    pub fn square() -> Self {
        SmoothFn::Poly {
            coeffs: vec![T::zero(), T::zero(), T::one()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            SmoothFn::Poly { coeffs } => !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite()),
            SmoothFn::Exp { scale } | SmoothFn::Cos { scale } | SmoothFn::Sin { scale } => {
                scale.is_finite()
            }
            SmoothFn::AbsPow { p } => p.is_finite() && *p >= T::lit(2.0),
        };
        if ok {
            Ok(())
        } else {
            Err(ItoError::InvalidFn(format!("{self:?}")))
        }
    }

    /// Point where a higher derivative jumps, if any.
    pub fn kink(&self) -> Option<T> {
        match self {
            SmoothFn::AbsPow { p } if p.fract() != T::zero() || (*p / T::lit(2.0)).fract() != T::zero() => {
                Some(T::zero())
            }
            _ => None,
        }
    }

    /// `true` when `f` is affine, so `f″ ≡ 0`.
    pub fn is_affine(&self) -> bool {
        match self {
            SmoothFn::Poly { coeffs } => coeffs.iter().skip(2).all(|c| *c == T::zero()),
            SmoothFn::Exp { scale } | SmoothFn::Cos { scale } | SmoothFn::Sin { scale } => {
                *scale == T::zero()
            }
            SmoothFn::AbsPow { .. } => false,
        }
    }

    #[inline]
    pub fn f(&self, x: T) -> T {
        match self {
            SmoothFn::Poly { coeffs } => coeffs.iter().rev().fold(T::zero(), |a, c| a * x + *c),
            SmoothFn::Exp { scale } => (*scale * x).exp(),
            SmoothFn::Cos { scale } => (*scale * x).cos(),
            SmoothFn::Sin { scale } => (*scale * x).sin(),
            SmoothFn::AbsPow { p } => x.abs().powf(*p),
        }
    }

    #[inline]
    pub fn d1(&self, x: T) -> T {
        match self {
            SmoothFn::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(T::zero(), |a, (k, c)| a * x + *c * T::lit(k as f64)),
            SmoothFn::Exp { scale } => *scale * (*scale * x).exp(),
            SmoothFn::Cos { scale } => -*scale * (*scale * x).sin(),
            SmoothFn::Sin { scale } => *scale * (*scale * x).cos(),
            SmoothFn::AbsPow { p } => {
                let s = if x < T::zero() { -T::one() } else { T::one() };
                *p * s * x.abs().powf(*p - T::one())
            }
        }
    }

    #[inline]
    pub fn d2(&self, x: T) -> T {
        match self {
            SmoothFn::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(T::zero(), |a, (k, c)| a * x + *c * T::lit((k * (k - 1)) as f64)),
            SmoothFn::Exp { scale } => *scale * *scale * (*scale * x).exp(),
            SmoothFn::Cos { scale } => -*scale * *scale * (*scale * x).cos(),
            SmoothFn::Sin { scale } => -*scale * *scale * (*scale * x).sin(),
            SmoothFn::AbsPow { p } => *p * (*p - T::one()) * x.abs().powf(*p - T::lit(2.0)),
        }
    }
}

impl SmoothFn<f64> {
    /// Largest relative gap between the closed-form derivatives and central
    /// differences with step `1e-6` over `points`.
    pub fn fd_self_test(&self, points: &[f64]) -> f64 {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for &x in points {
            let fd1 = (self.f(x + h) - self.f(x - h)) / (2.0 * h);
            let fd2 = (self.d1(x + h) - self.d1(x - h)) / (2.0 * h);
            worst = worst
                .max((fd1 - self.d1(x)).abs() / self.d1(x).abs().max(1.0))
                .max((fd2 - self.d2(x)).abs() / self.d2(x).abs().max(1.0));
        }
        worst
    }
}

/// Quadrature sizes for the pathwise formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItoConfig {
    /// Gauss–Legendre nodes per segment for `∫ f′(Y) · rate ds`.
    pub time_nodes: usize,
    /// Nodes per segment in time for the ν-term tensor rule.
    pub nu_time_nodes: usize,
    /// Nodes per panel and axis in space for the ν-term tensor rule.
    pub space_nodes: usize,
    /// Nodes per geometric panel in `|z|` for the ν-term tensor rule.
    pub nu_nodes: usize,
    pub nu_panel_ratio: f64,
    pub quad: QuadConfig,
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self {
            time_nodes: 64,
            nu_time_nodes: 8,
            space_nodes: 8,
            nu_nodes: 8,
            nu_panel_ratio: 2.0,
            quad: QuadConfig::default(),
        }
    }
}

/// Both sides of one formula at time `t`.
///
/// Terms follow the four-term layout: `∫f′(Y)G ds`, big-jump N-sum,
/// compensated small-jump sum, ν-term. Unused terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ItoTerms<T> {
    pub t: T,
    pub lhs: T,
    pub terms: [T; 4],
    pub rhs: T,
    pub residual: T,
}

impl<T: Real> ItoTerms<T> {
    fn new(t: T, lhs: T, terms: [T; 4]) -> Self {
        let rhs = terms.iter().copied().sum::<T>();
        Self {
            t,
            lhs,
            terms,
            rhs,
            residual: lhs - rhs,
        }
    }
}

/// `f(Y(t)) − f(Y(0))`.
pub fn ito_lhs<T: Real>(f: &SmoothFn<T>, path: &CadlagPath<T>, t: T) -> T {
    f.f(path.eval(t)) - f.f(path.eval(T::zero()))
}

/// `∫₀ᵗ φ(s, Y(s)) ds` with a fixed Gauss–Legendre rule on every segment.
///
/// With a `kink`, segments are further split where `Y` crosses it.
fn path_time_integral<T: Real, F>(
    path: &CadlagPath<T>,
    t: T,
    extra_breaks: &[T],
    nodes: usize,
    kink: Option<T>,
    mut phi: F,
) -> T
where
    F: FnMut(T, T) -> T,
{
    let gl = GaussLegendre::cached(nodes);
    let cuts = path.segments(t, extra_breaks);
    let mut total = T::zero();
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b <= a {
            continue;
        }
        let level = path.jump_sum(a);
        let y = |s: T| path.drift(s) + level;
        let mut pieces = vec![a];
        if let Some(k) = kink {
            pieces.extend(crossings(&y, a, b, k));
        }
        pieces.push(b);
        for p in pieces.windows(2) {
            for (s, w) in gl.points(p[0], p[1]) {
                total += w * phi(s, y(s));
            }
        }
    }
    total
}

/// Times in `(a, b)` where `y` crosses `level`, from a 64-cell scan refined
/// by bisection.
fn crossings<T: Real>(y: &impl Fn(T) -> T, a: T, b: T, level: T) -> Vec<T> {
    const CELLS: usize = 64;
    let mut out = Vec::new();
    let h = (b - a) / T::lit(CELLS as f64);
    let mut s0 = a;
    let mut v0 = y(a) - level;
    for i in 1..=CELLS {
        let s1 = if i == CELLS { b } else { a + h * T::lit(i as f64) };
        let v1 = y(s1) - level;
        if (v0 < T::zero()) != (v1 < T::zero()) {
            let neg = v0 < T::zero();
            let (lo, hi) = quad::bisect_boundary(|s| (y(s) - level < T::zero()) == neg, s0, s1, T::epsilon());
            let root = (lo + hi) * T::lit(0.5);
            if root > a && root < b {
                out.push(root);
            }
        }
        s0 = s1;
        v0 = v1;
    }
    out
}

/// Jump sum `Σ_{tᵢ ≤ t, selected} [f(Y(tᵢ−) + Δᵢ) − f(Y(tᵢ−))]`.
fn jump_term<T: Real>(
    f: &SmoothFn<T>,
    path: &CadlagPath<T>,
    t: T,
    select: impl Fn(usize) -> bool,
) -> T {
    let mut total = T::zero();
    for (i, (&ti, &d)) in path.jump_times().iter().zip(path.jumps()).enumerate() {
        if ti > t {
            break;
        }
        if select(i) {
            let y = path.left_at_jump(i);
            total += f.f(y + d) - f.f(y);
        }
    }
    total
}

/// Tensor rule over `B × shell` used for the ν-term.
struct SpaceJumpRule<T> {
    xs: Vec<([T; 3], T)>,
    zs: Vec<(T, T)>,
}

impl<T: Real> SpaceJumpRule<T> {
    fn new(
        h: &DetIntegrand<T>,
        space: &SpaceBox<T>,
        shell: &Shell<T>,
        m: &LevyMeasure<T>,
        cfg: &ItoConfig,
    ) -> Result<Self> {
        let dim = space.dim();
        let mut xs = vec![([T::zero(); 3], T::one())];
        if h.space_dim() == 0 {
            xs[0].1 = space.volume();
        } else {
            let gl = GaussLegendre::cached(cfg.space_nodes.max(1));
            for k in 0..dim {
                let (lo, hi) = (space.lo()[k], space.hi()[k]);
                let mut cuts = vec![lo, hi];
                cuts.extend(h.space_breaks(k).into_iter().filter(|&b| b > lo && b < hi));
                cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                cuts.dedup();
                let axis: Vec<(T, T)> = cuts.windows(2).flat_map(|c| gl.points(c[0], c[1]).collect::<Vec<_>>()).collect();
                let mut next = Vec::with_capacity(xs.len() * axis.len());
                for (x, w) in &xs {
                    for &(u, wu) in &axis {
                        let mut y = *x;
                        y[k] = u;
                        next.push((y, *w * wu));
                    }
                }
                xs = next;
            }
        }
        let zs = m.nu_rule(shell, cfg.nu_nodes, T::lit(cfg.nu_panel_ratio), &h.jump_breaks())?;
        Ok(Self { xs, zs })
    }

    /// `∫_B ∫_shell [f(y + H(s,x,z)) − f(y)] ν(dz) dx`.
    fn apply(&self, f: &SmoothFn<T>, h: &DetIntegrand<T>, s: T, y: T, dim: usize) -> T {
        let fy = f.f(y);
        let mut total = T::zero();
        for (x, wx) in &self.xs {
            let mut inner = T::zero();
            for &(z, wz) in &self.zs {
                inner += wz * (f.f(y + h.eval(s, &x[..dim], z)) - fy);
            }
            total += *wx * inner;
        }
        total
    }
}

/// `∫₀ᵗ ∫_B ∫_shell [f(Y(s)+H) − f(Y(s))] ν(dz) dx ds`, with `Y(s−)` in
/// place of `Y(s)` when `left` is set.
#[allow(clippy::too_many_arguments)]
pub fn nu_jump_integral<T: Real>(
    f: &SmoothFn<T>,
    h: &DetIntegrand<T>,
    path: &CadlagPath<T>,
    space: &SpaceBox<T>,
    shell: &Shell<T>,
    m: &LevyMeasure<T>,
    t: T,
    left: bool,
    cfg: &ItoConfig,
) -> Result<T> {
    if h.is_zero() {
        return Ok(T::zero());
    }
    let rule = SpaceJumpRule::new(h, space, shell, m, cfg)?;
    let dim = space.dim();
    let breaks = h.time_breaks();
    let gl = GaussLegendre::cached(cfg.nu_time_nodes.max(1));
    let mut total = T::zero();
    for seg in path.segments(t, &breaks).windows(2) {
        for (s, w) in gl.points(seg[0], seg[1]) {
            let y = if left { path.eval_left(s) } else { path.eval(s) };
            total += w * rule.apply(f, h, s, y, dim);
        }
    }
    Ok(total)
}

/// Jump-only formula: `Y = ∫G ds + ∫∫∫ K dN` on the whole window shell.
#[allow(clippy::too_many_arguments)]
pub fn ito_rhs_lemma<T: Real>(
    f: &SmoothFn<T>,
    g: &DetIntegrand<T>,
    k: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    t: T,
    cfg: &ItoConfig,
) -> Result<ItoTerms<T>> {
    let path = integrate::build_path(g, k, &DetIntegrand::zero(), c, m, T::zero(), &cfg.quad)?;
    let breaks = g.time_breaks();
    let term1 = path_time_integral(&path, t, &breaks, cfg.time_nodes, f.kink(), |s, y| f.d1(y) * g.eval_time(s));
    let term2 = jump_term(f, &path, t, |_| true);
    Ok(ItoTerms::new(t, ito_lhs(f, &path, t), [term1, term2, T::zero(), T::zero()]))
}

/// Four-term formula with big jumps `|z| > split` integrated against N by `K`
/// and small jumps against N̂ by `H`.
#[allow(clippy::too_many_arguments)]
pub fn ito_rhs_thm1<T: Real>(
    f: &SmoothFn<T>,
    g: &DetIntegrand<T>,
    k: &DetIntegrand<T>,
    h: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    split: T,
    t: T,
    cfg: &ItoConfig,
) -> Result<ItoTerms<T>> {
    let path = integrate::build_path(g, k, h, c, m, split, &cfg.quad)?;
    let w = c.window();
    let small = w.shell.split_at(split).0;
    let comp = match &small {
        Some(s) if !h.is_zero() => h.compensator_density(&w.space, m, s, &cfg.quad)?,
        _ => DetIntegrand::zero(),
    };
    let mut breaks = g.time_breaks();
    breaks.extend(h.time_breaks());
    let term1 = path_time_integral(&path, t, &breaks, cfg.time_nodes, f.kink(), |s, y| f.d1(y) * g.eval_time(s));
    let comp_term = if comp.is_zero() {
        T::zero()
    } else {
        path_time_integral(&path, t, &breaks, cfg.time_nodes, f.kink(), |s, y| f.d1(y) * comp.eval_time(s))
    };
    let points = c.points();
    let term2 = jump_term(f, &path, t, |i| points[i].z.abs() > split);
    let small_sum = jump_term(f, &path, t, |i| points[i].z.abs() <= split);
    let a_int = match &small {
        Some(s) if !f.is_affine() => nu_jump_integral(f, h, &path, &w.space, s, m, t, false, cfg)?,
        _ => T::zero(),
    };
    // affine f: [f(Y+H) − f(Y)] = f′·H exactly, so the ν-term vanishes
    let (term3, term4) = if f.is_affine() {
        (small_sum - comp_term, T::zero())
    } else {
        (small_sum - a_int, a_int - comp_term)
    };
    Ok(ItoTerms::new(t, ito_lhs(f, &path, t), [term1, term2, term3, term4]))
}

/// Three-term formula with every jump in the window compensated.
#[allow(clippy::too_many_arguments)]
pub fn ito_rhs_thm2<T: Real>(
    f: &SmoothFn<T>,
    g: &DetIntegrand<T>,
    h: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    t: T,
    cfg: &ItoConfig,
) -> Result<ItoTerms<T>> {
    ito_rhs_thm1(f, g, &DetIntegrand::zero(), h, c, m, T::infinity(), t, cfg)
}

/// Residual report rows `(replicate, t, lhs, term1..term4, rhs, residual)`.
pub fn residual_csv<T: Real>(rows: &[(usize, ItoTerms<T>)]) -> String {
    let mut out = String::from("replicate,t,lhs,term1,term2,term3,term4,rhs,residual\n");
    for (r, x) in rows {
        out.push_str(&format!(
            "{r},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            x.t, x.lhs, x.terms[0], x.terms[1], x.terms[2], x.terms[3], x.rhs, x.residual
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Prim;
    use crate::prm::{simulate, Point, Window};

    fn window() -> Window<f64> {
        Window::new(
            1.0,
            SpaceBox::interval(0.0, 1.0).unwrap(),
            Shell::new(0.1, 2.0).unwrap(),
        )
        .unwrap()
    }

    fn fns() -> Vec<SmoothFn<f64>> {
        vec![
            SmoothFn::identity(),
            SmoothFn::square(),
            SmoothFn::Exp { scale: 0.7 },
            SmoothFn::Cos { scale: 1.3 },
            SmoothFn::Sin { scale: 0.4 },
            SmoothFn::AbsPow { p: 2.5 },
            SmoothFn::Poly {
                coeffs: vec![1.0, -0.5, 0.25, 0.1],
            },
        ]
    }

    #[test]
    fn derivative_self_test() {
        let pts = [-1.7, -0.3, 0.2, 0.9, 2.4];
        for f in fns() {
            assert!(f.fd_self_test(&pts) < 1e-6, "{f:?}");
        }
        assert!(SmoothFn::AbsPow { p: 1.5 }.validate().is_err());
    }

    #[test]
    fn square_of_two_jumps() {
        let w = window();
        let c = PointConfiguration::from_points(
            w,
            vec![Point::new(0.2, &[0.5], 1.0), Point::new(0.6, &[0.5], -2.0)],
            0,
        )
        .unwrap();
        let m = LevyMeasure::atoms([(1.0, 1.0), (-2.0, 1.0)]).unwrap();
        let path = integrate::build_path(
            &DetIntegrand::zero(),
            &DetIntegrand::z(),
            &DetIntegrand::zero(),
            &c,
            &m,
            0.0,
            &QuadConfig::default(),
        )
        .unwrap();
        assert_eq!(ito_lhs(&SmoothFn::square(), &path, 1.0), 1.0);
    }

    #[test]
    fn lemma_residuals() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 2.0).unwrap();
        let g = DetIntegrand::time(Prim::Cos { freq: 2.0, phase: 0.1 });
        let k = DetIntegrand::z().mul(&DetIntegrand::space(0, Prim::Exp { rate: -1.0, abs: false }));
        for seed in 0..20 {
            let c = simulate(&window(), &m, seed).unwrap();
            for f in fns() {
                let r = ito_rhs_lemma(&f, &g, &k, &c, &m, 1.0, &ItoConfig::default()).unwrap();
                assert!(r.residual.abs() < 1e-10, "{f:?} {r:?}");
            }
        }
    }

    #[test]
    fn general_and_compensated_forms_agree() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 2.0).unwrap();
        let cfg = ItoConfig::default();
        let g2 = DetIntegrand::time(Prim::Exp { rate: -1.0, abs: false });
        let h = DetIntegrand::z().mul(&DetIntegrand::time(Prim::Cos { freq: 1.0, phase: 0.0 }));
        let w = window();
        let big = w.shell.split_at(1.0).1.unwrap();
        let c_big = h.compensator_density(&w.space, &m, &big, &cfg.quad).unwrap();
        let g1 = g2.sub(&c_big);
        for seed in 0..10 {
            let c = simulate(&w, &m, seed).unwrap();
            for f in fns() {
                let a = ito_rhs_thm1(&f, &g1, &h, &h, &c, &m, 1.0, 1.0, &cfg).unwrap();
                let b = ito_rhs_thm2(&f, &g2, &h, &c, &m, 1.0, &cfg).unwrap();
                assert!(a.residual.abs() < 1e-8, "{f:?} {a:?}");
                assert!(b.residual.abs() < 1e-8, "{f:?} {b:?}");
                assert!((a.rhs - b.rhs).abs() < 1e-10);
                assert!((a.lhs - b.lhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_has_no_nu_term() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 2.0).unwrap();
        let h = DetIntegrand::z();
        let c = simulate(&window(), &m, 5).unwrap();
        let r = ito_rhs_thm1(
            &SmoothFn::identity(),
            &DetIntegrand::constant(0.3),
            &DetIntegrand::constant(1.0),
            &h,
            &c,
            &m,
            1.0,
            1.0,
            &ItoConfig::default(),
        )
        .unwrap();
        assert_eq!(r.terms[3], 0.0);
        assert!(r.residual.abs() < 1e-12);
    }

    #[test]
    fn zero_h_reduces_to_lemma() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 2.0).unwrap();
        let g = DetIntegrand::constant(0.5);
        let k = DetIntegrand::z();
        let c = simulate(&window(), &m, 9).unwrap();
        let f = SmoothFn::Exp { scale: 0.5 };
        let cfg = ItoConfig::default();
        let a = ito_rhs_thm1(&f, &g, &k, &DetIntegrand::zero(), &c, &m, 1.0, 1.0, &cfg).unwrap();
        assert_eq!(a.terms[2] + a.terms[3], 0.0);
    }

    #[test]
    fn left_and_right_nu_terms_agree() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 2.0).unwrap();
        let w = window();
        let h = DetIntegrand::z().mul(&DetIntegrand::space(0, Prim::Cos { freq: 1.0, phase: 0.0 }));
        let c = simulate(&w, &m, 2).unwrap();
        let cfg = ItoConfig::default();
        let path = integrate::build_path(&DetIntegrand::zero(), &h, &h, &c, &m, 1.0, &cfg.quad).unwrap();
        let small = w.shell.split_at(1.0).0.unwrap();
        let f = SmoothFn::square();
        let a = nu_jump_integral(&f, &h, &path, &w.space, &small, &m, 1.0, false, &cfg).unwrap();
        let b = nu_jump_integral(&f, &h, &path, &w.space, &small, &m, 1.0, true, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
