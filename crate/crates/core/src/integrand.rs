//! Deterministic integrands `H(s, x, z)` as finite sums of factorized terms
//!
//! ```text
//! H(s,x,z) = Σₖ cₖ · gₖ(s) · bₖ₁(x₁)⋯bₖ_d(x_d) · jₖ(z)
//! ```
//!
//! where every factor is a product of scalar primitives. The class is closed
//! under sums, differences and products, so `|H|²` for real `H` stays
//! factorized and its compensator is a sum of products of one-dimensional
//! integrals. In configs integrands are written as JSON expression trees
//! ([`Expr`]) and normalized on load.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{LevyMeasure, MeasureError, Shell};
use crate::prm::{SpaceBox, MAX_DIM};
use crate::quad::{self, QuadConfig, QuadError};
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IntegrandError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("integrand must depend on time only")]
    NotTimeOnly,
    #[error("integrand must not depend on the jump size")]
    DependsOnJump,
    #[error("space factor on axis {axis} is not integrable over the real line")]
    NonDecaying { axis: usize },
    #[error("operation needs a single factorized term, found {terms}")]
    NotFactorizable { terms: usize },
    #[error("invalid expression: {0}")]
    InvalidExpr(String),
}

pub type Result<T, E = IntegrandError> = std::result::Result<T, E>;

/// Scalar primitive functions of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "prim", rename_all = "snake_case")]
pub enum Prim<T> {
    /// `Σ cₖ uᵏ`
    Poly { coeffs: Vec<T> },
    /// `e^{rate·u}`, or `e^{rate·|u|}` when `abs`
    Exp {
        rate: T,
        #[serde(default)]
        abs: bool,
    },
    /// `cos(freq·u + phase)`
    Cos {
        freq: T,
        #[serde(default)]
        phase: T,
    },
    /// `sin(freq·u + phase)`
    Sin {
        freq: T,
        #[serde(default)]
        phase: T,
    },
    /// `1{lo < u ≤ hi}`, or on `|u|` when `abs`
    Indicator {
        lo: T,
        hi: T,
        #[serde(default)]
        abs: bool,
    },
    /// `|u|^p`
    AbsPow { p: T },
}

impl<T: Real> Prim<T> {
    #[inline]
    pub fn eval(&self, u: T) -> T {
        match self {
            Prim::Poly { coeffs } => coeffs.iter().rev().fold(T::zero(), |acc, c| acc * u + *c),
            Prim::Exp { rate, abs } => (*rate * if *abs { u.abs() } else { u }).exp(),
            Prim::Cos { freq, phase } => (*freq * u + *phase).cos(),
            Prim::Sin { freq, phase } => (*freq * u + *phase).sin(),
            Prim::Indicator { lo, hi, abs } => {
                let v = if *abs { u.abs() } else { u };
                if v > *lo && v <= *hi {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Prim::AbsPow { p } => u.abs().powf(*p),
        }
    }

    /// Antiderivative vanishing at zero, when known in closed form.
    pub fn antiderivative(&self, u: T) -> Option<T> {
        let sgn = |v: T| if v < T::zero() { -T::one() } else { T::one() };
        Some(match self {
            Prim::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(T::zero(), |acc, (k, c)| acc * u + *c / T::lit((k + 1) as f64))
                * u,
            Prim::Exp { rate, abs } => {
                if *rate == T::zero() {
                    u
                } else if *abs {
                    sgn(u) * ((*rate * u.abs()).exp_m1()) / *rate
                } else {
                    (*rate * u).exp_m1() / *rate
                }
            }
            Prim::Cos { freq, phase } => {
                if *freq == T::zero() {
                    phase.cos() * u
                } else {
                    ((*freq * u + *phase).sin() - phase.sin()) / *freq
                }
            }
            Prim::Sin { freq, phase } => {
                if *freq == T::zero() {
                    phase.sin() * u
                } else {
                    (phase.cos() - (*freq * u + *phase).cos()) / *freq
                }
            }
            Prim::Indicator { lo, hi, abs } => {
                if *abs {
                    let a = u.abs();
                    let lo = lo.max(T::zero());
                    if *hi <= lo {
                        T::zero()
                    } else {
                        sgn(u) * (a.max(lo).min(*hi) - lo)
                    }
                } else {
                    let f = |v: T| v.max(*lo).min(*hi);
                    f(u) - f(T::zero())
                }
            }
            Prim::AbsPow { p } => sgn(u) * u.abs().powf(*p + T::one()) / (*p + T::one()),
        })
    }

    /// Points where the primitive is not smooth.
    pub fn breaks(&self) -> Vec<T> {
        match self {
            Prim::Indicator { lo, hi, abs } => {
                if *abs {
                    vec![-*hi, -*lo, *lo, *hi]
                } else {
                    vec![*lo, *hi]
                }
            }
            Prim::Exp { abs: true, .. } | Prim::AbsPow { .. } => vec![T::zero()],
            _ => Vec::new(),
        }
    }

    /// Order `q` with `prim(u) = O(|u|^q)` at zero; `∞` when it vanishes on
    /// a neighbourhood of zero.
    pub fn order_at_zero(&self) -> T {
        match self {
            Prim::Poly { coeffs } => coeffs
                .iter()
                .position(|c| *c != T::zero())
                .map(|k| T::lit(k as f64))
                .unwrap_or_else(T::infinity),
            Prim::AbsPow { p } => *p,
            Prim::Indicator { lo, hi, abs } => {
                let vanishes = if *abs {
                    *lo > T::zero() || *hi <= T::zero()
                } else {
                    *lo > T::zero() || *hi < T::zero()
                };
                if vanishes {
                    T::infinity()
                } else {
                    T::zero()
                }
            }
            Prim::Sin { freq, phase } if *phase == T::zero() && *freq != T::zero() => T::one(),
            _ => T::zero(),
        }
    }

    /// Compact support `[lo, hi]` in `u`, if any.
    fn support(&self) -> Option<(T, T)> {
        match self {
            Prim::Indicator { lo, hi, abs } => Some(if *abs { (-*hi, *hi) } else { (*lo, *hi) }),
            _ => None,
        }
    }

    /// Growth rate of `log|prim|` as `u → +∞` (sign = +1) or `u → -∞`.
    fn exp_rate(&self, sign: T) -> T {
        match self {
            Prim::Exp { rate, abs } => {
                if *abs {
                    *rate
                } else {
                    *rate * sign
                }
            }
            _ => T::zero(),
        }
    }
}

/// Merges constants and exponentials and multiplies polynomials together.
fn normalize_prims<T: Real>(prims: Vec<Prim<T>>) -> (T, Vec<Prim<T>>) {
    let mut coef = T::one();
    let mut poly: Option<Vec<T>> = None;
    let mut exp_plain = T::zero();
    let mut exp_abs = T::zero();
    let mut rest = Vec::new();
    for p in prims {
        match p {
            Prim::Poly { coeffs } if coeffs.len() <= 1 => {
                coef *= coeffs.first().copied().unwrap_or(T::zero());
            }
            Prim::Poly { coeffs } => {
                poly = Some(match poly {
                    None => coeffs,
                    Some(prev) => poly_mul(&prev, &coeffs),
                });
            }
            Prim::Exp { rate, abs: false } => exp_plain += rate,
            Prim::Exp { rate, abs: true } => exp_abs += rate,
            other => rest.push(other),
        }
    }
    let mut out = Vec::new();
    if let Some(p) = poly {
        out.push(Prim::Poly { coeffs: p });
    }
    if exp_plain != T::zero() {
        out.push(Prim::Exp {
            rate: exp_plain,
            abs: false,
        });
    }
    if exp_abs != T::zero() {
        out.push(Prim::Exp {
            rate: exp_abs,
            abs: true,
        });
    }
    out.extend(rest);
    (coef, out)
}

fn poly_mul<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += *x * *y;
        }
    }
    out
}

#[inline]
fn eval_prims<T: Real>(prims: &[Prim<T>], u: T) -> T {
    prims.iter().fold(T::one(), |acc, p| acc * p.eval(u))
}

fn prim_breaks<T: Real>(prims: &[Prim<T>]) -> Vec<T> {
    let mut b: Vec<T> = prims.iter().flat_map(|p| p.breaks()).collect();
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoint"));
    b.dedup();
    b
}

/// `∫_a^b Π prims` (or `∫ |Π prims|^p` when `power` is given).
fn integrate_prims<T: Real>(
    prims: &[Prim<T>],
    a: T,
    b: T,
    power: Option<T>,
    cfg: &QuadConfig,
) -> Result<T> {
    if a == b {
        return Ok(T::zero());
    }
    match (prims, power) {
        ([], None) => return Ok(b - a),
        ([p], None) => {
            if let (Some(fb), Some(fa)) = (p.antiderivative(b), p.antiderivative(a)) {
                return Ok(fb - fa);
            }
        }
        _ => {}
    }
    let breaks = prim_breaks(prims);
    let q = match power {
        None => quad::integrate_with_breaks(|u| eval_prims(prims, u), a, b, &breaks, cfg)?,
        Some(p) => quad::integrate_with_breaks(
            |u| eval_prims(prims, u).abs().powf(p),
            a,
            b,
            &breaks,
            cfg,
        )?,
    };
    Ok(q.value)
}

/// `∫_a^∞ Π prims` with a closed form for a lone exponential.
fn integrate_prims_to_inf<T: Real>(
    prims: &[Prim<T>],
    a: T,
    sign: T,
    power: Option<T>,
    cfg: &QuadConfig,
) -> Result<T> {
    // integral of u ↦ Π prims(sign·u) over [a, ∞)
    if let ([Prim::Exp { rate, abs }], None) = (prims, power) {
        let r = if *abs { *rate } else { *rate * sign };
        if a >= T::zero() || !*abs {
            return Ok(-(r * a).exp() / r);
        }
    }
    let breaks: Vec<T> = prim_breaks(prims)
        .into_iter()
        .map(|b| b * sign)
        .filter(|&b| b > a)
        .collect();
    let f = |u: T| {
        let v = eval_prims(prims, sign * u);
        match power {
            None => v,
            Some(p) => v.abs().powf(p),
        }
    };
    let mut total = T::zero();
    let mut start = a;
    if let Some(&last) = breaks.iter().max_by(|x, y| x.partial_cmp(y).expect("finite")) {
        total += quad::integrate_with_breaks(f, a, last, &breaks, cfg)?.value;
        start = last;
    }
    total += quad::integrate_to_inf(f, start, cfg)?.value;
    Ok(total)
}

/// One factorized term `coef · g(s) · Π_k b_k(x_k) · j(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term<T> {
    pub coef: T,
    pub time: Vec<Prim<T>>,
    /// One primitive list per axis; missing axes are the constant 1.
    pub space: Vec<Vec<Prim<T>>>,
    pub jump: Vec<Prim<T>>,
}

impl<T: Real> Term<T> {
    pub fn constant(c: T) -> Self {
        Self {
            coef: c,
            time: Vec::new(),
            space: Vec::new(),
            jump: Vec::new(),
        }
    }

    #[inline]
    pub fn eval(&self, s: T, x: &[T], z: T) -> T {
        let mut v = self.coef * eval_prims(&self.time, s) * eval_prims(&self.jump, z);
        for (axis, prims) in self.space.iter().enumerate() {
            if !prims.is_empty() {
                v *= eval_prims(prims, x[axis]);
            }
        }
        v
    }

    #[inline]
    pub fn time_factor(&self, s: T) -> T {
        eval_prims(&self.time, s)
    }

    #[inline]
    pub fn space_factor(&self, x: &[T]) -> T {
        self.space
            .iter()
            .enumerate()
            .fold(T::one(), |acc, (k, p)| acc * eval_prims(p, x[k]))
    }

    #[inline]
    pub fn jump_factor(&self, z: T) -> T {
        eval_prims(&self.jump, z)
    }

    fn mul(&self, other: &Term<T>) -> Term<T> {
        let (ct, time) = normalize_prims([self.time.clone(), other.time.clone()].concat());
        let (cj, jump) = normalize_prims([self.jump.clone(), other.jump.clone()].concat());
        let dim = self.space.len().max(other.space.len());
        let mut cs = T::one();
        let mut space = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut prims = self.space.get(k).cloned().unwrap_or_default();
            prims.extend(other.space.get(k).cloned().unwrap_or_default());
            let (c, p) = normalize_prims(prims);
            cs *= c;
            space.push(p);
        }
        while space.last().is_some_and(|p| p.is_empty()) {
            space.pop();
        }
        Term {
            coef: self.coef * other.coef * ct * cj * cs,
            time,
            space,
            jump,
        }
    }

    fn normalized(mut self) -> Self {
        let (c, t) = normalize_prims(std::mem::take(&mut self.time));
        let (cj, j) = normalize_prims(std::mem::take(&mut self.jump));
        self.coef = self.coef * c * cj;
        self.time = t;
        self.jump = j;
        let mut space = Vec::new();
        for prims in std::mem::take(&mut self.space) {
            let (c, p) = normalize_prims(prims);
            self.coef *= c;
            space.push(p);
        }
        while space.last().is_some_and(|p| p.is_empty()) {
            space.pop();
        }
        self.space = space;
        self
    }

    /// `∫_a^b g(s) ds`.
    pub fn time_integral(&self, a: T, b: T, cfg: &QuadConfig) -> Result<T> {
        integrate_prims(&self.time, a, b, None, cfg)
    }

    /// `∫_a^b |g(s)|^p ds`.
    pub fn time_abs_pow_integral(&self, a: T, b: T, p: T, cfg: &QuadConfig) -> Result<T> {
        integrate_prims(&self.time, a, b, Some(p), cfg)
    }

    /// `∫_box Π b_k(x_k) dx`, or `∫_box |Π b_k|^p dx` with `power`.
    pub fn space_integral(&self, space: &SpaceBox<T>, power: Option<T>, cfg: &QuadConfig) -> Result<T> {
        let mut v = T::one();
        for k in 0..space.dim() {
            let empty = Vec::new();
            let prims = self.space.get(k).unwrap_or(&empty);
            v *= integrate_prims(prims, space.lo()[k], space.hi()[k], power, cfg)?;
        }
        Ok(v)
    }

    /// `∫_{|u|>a} Π prims(u) du` on one axis, failing when not integrable.
    fn axis_tail(&self, axis: usize, a: T, power: Option<T>, cfg: &QuadConfig) -> Result<T> {
        let empty = Vec::new();
        let prims = self.space.get(axis).unwrap_or(&empty);
        if !axis_integrable(prims) {
            return Err(IntegrandError::NonDecaying { axis });
        }
        let pos = integrate_prims_to_inf(prims, a, T::one(), power, cfg)?;
        let neg = integrate_prims_to_inf(prims, a, -T::one(), power, cfg)?;
        Ok(pos + neg)
    }

    /// `∫_{ℝᵈ ∖ [-a,a]ᵈ} Π b_k(x_k) dx`, split by the first axis that leaves
    /// the cube so no cancellation occurs.
    pub fn space_integral_outside_cube(
        &self,
        a: T,
        dim: usize,
        power: Option<T>,
        cfg: &QuadConfig,
    ) -> Result<T> {
        let empty = Vec::new();
        let mut inside = Vec::with_capacity(dim);
        let mut whole = Vec::with_capacity(dim);
        let mut tail = Vec::with_capacity(dim);
        for k in 0..dim {
            let prims = self.space.get(k).unwrap_or(&empty);
            let t = self.axis_tail(k, a, power, cfg)?;
            let i = integrate_prims(prims, -a, a, power, cfg)?;
            inside.push(i);
            tail.push(t);
            whole.push(i + t);
        }
        let mut total = T::zero();
        for k in 0..dim {
            let mut v = tail[k];
            for (j, (&i, &w)) in inside.iter().zip(&whole).enumerate() {
                if j < k {
                    v *= i;
                } else if j > k {
                    v *= w;
                }
            }
            total += v;
        }
        Ok(total)
    }

    /// `∫_shell j(z) ν(dz)` (or `∫ |j|^p dν`).
    pub fn jump_integral(&self, m: &LevyMeasure<T>, shell: &Shell<T>, power: Option<T>) -> Result<T> {
        let order = self.jump_order_at_zero() * power.unwrap_or(T::one());
        match (&self.jump[..], power) {
            ([], None) => return Ok(m.shell_mass(shell)?),
            ([], Some(_)) => return Ok(m.shell_mass(shell)?),
            ([Prim::AbsPow { p }], None) => return Ok(m.shell_moment(shell, *p, false)?),
            ([Prim::AbsPow { p }], Some(q)) => return Ok(m.shell_moment(shell, *p * q, false)?),
            ([Prim::Poly { coeffs }], None) => {
                let mut v = T::zero();
                for (k, c) in coeffs.iter().enumerate() {
                    if *c != T::zero() {
                        v += *c * m.shell_moment(shell, T::lit(k as f64), k % 2 == 1)?;
                    }
                }
                return Ok(v);
            }
            _ => {}
        }
        let breaks: Vec<T> = prim_breaks(&self.jump).into_iter().map(|b| b.abs()).collect();
        let order = if order == T::zero() { None } else { Some(order) };
        let jump = &self.jump;
        let v = match power {
            None => m.nu_integral(shell, |z| eval_prims(jump, z), order, &breaks)?,
            Some(p) => m.nu_integral(shell, |z| eval_prims(jump, z).abs().powf(p), order, &breaks)?,
        };
        Ok(v)
    }

    pub fn jump_order_at_zero(&self) -> T {
        self.jump
            .iter()
            .fold(T::zero(), |acc, p| acc + p.order_at_zero())
    }

    /// Radius of the smallest cube containing the spatial support, or `∞`.
    pub fn space_support_radius(&self, dim: usize) -> T {
        let mut radius = T::zero();
        for k in 0..dim {
            let bound = self
                .space
                .get(k)
                .into_iter()
                .flatten()
                .filter_map(|p| p.support())
                .fold(None, |acc: Option<(T, T)>, (lo, hi)| {
                    Some(match acc {
                        None => (lo, hi),
                        Some((a, b)) => (a.max(lo), b.min(hi)),
                    })
                });
            match bound {
                Some((lo, hi)) if hi <= lo => return T::zero(),
                Some((lo, hi)) => radius = radius.max(lo.abs()).max(hi.abs()),
                None => return T::infinity(),
            }
        }
        radius
    }
}

fn axis_integrable<T: Real>(prims: &[Prim<T>]) -> bool {
    if prims.iter().any(|p| p.support().is_some()) {
        return true;
    }
    [T::one(), -T::one()]
        .iter()
        .all(|&s| prims.iter().map(|p| p.exp_rate(s)).fold(T::zero(), |a, r| a + r) < T::zero())
}

/// A deterministic integrand: a finite sum of factorized [`Term`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "Expr<T>", into = "Expr<T>")]
pub struct DetIntegrand<T> {
    terms: Vec<Term<T>>,
}

impl<T: Real> Default for DetIntegrand<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> DetIntegrand<T> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: T) -> Self {
        Self::from_terms(vec![Term::constant(c)])
    }

    pub fn from_terms(terms: Vec<Term<T>>) -> Self {
        Self {
            terms: terms
                .into_iter()
                .map(Term::normalized)
                .filter(|t| t.coef != T::zero())
                .collect(),
        }
    }

    pub fn time(p: Prim<T>) -> Self {
        Self::from_terms(vec![Term {
            time: vec![p],
            ..Term::constant(T::one())
        }])
    }

    pub fn space(axis: usize, p: Prim<T>) -> Self {
        let mut space = vec![Vec::new(); axis + 1];
        space[axis].push(p);
        Self::from_terms(vec![Term {
            space,
            ..Term::constant(T::one())
        }])
    }

    pub fn jump(p: Prim<T>) -> Self {
        Self::from_terms(vec![Term {
            jump: vec![p],
            ..Term::constant(T::one())
        }])
    }

    /// `H(s,x,z) = z`.
    pub fn z() -> Self {
        Self::jump(Prim::Poly {
            coeffs: vec![T::zero(), T::one()],
        })
    }

    /// Indicator of a time interval `(a, b]`.
    pub fn time_indicator(a: T, b: T) -> Self {
        Self::time(Prim::Indicator {
            lo: a,
            hi: b,
            abs: false,
        })
    }

    /// Indicator of a box, `Π_k 1{lo_k < x_k ≤ hi_k}`.
    pub fn box_indicator(b: &SpaceBox<T>) -> Self {
        let space = b
            .lo()
            .iter()
            .zip(b.hi())
            .map(|(&lo, &hi)| {
                vec![Prim::Indicator {
                    lo,
                    hi,
                    abs: false,
                }]
            })
            .collect();
        Self::from_terms(vec![Term {
            space,
            ..Term::constant(T::one())
        }])
    }

    /// Indicator of a shell `{lo < |z| ≤ hi}`.
    pub fn shell_indicator(s: &Shell<T>) -> Self {
        Self::jump(Prim::Indicator {
            lo: s.lo(),
            hi: s.hi(),
            abs: true,
        })
    }

    pub fn terms(&self) -> &[Term<T>] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_time_only(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.jump.is_empty() && t.space.iter().all(|p| p.is_empty()))
    }

    pub fn depends_on_jump(&self) -> bool {
        self.terms.iter().any(|t| !t.jump.is_empty())
    }

    /// Highest spatial axis used, plus one.
    pub fn space_dim(&self) -> usize {
        self.terms.iter().map(|t| t.space.len()).max().unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, s: T, x: &[T], z: T) -> T {
        self.terms.iter().map(|t| t.eval(s, x, z)).sum()
    }

    /// Evaluates a time-only integrand.
    #[inline]
    pub fn eval_time(&self, s: T) -> T {
        self.terms
            .iter()
            .map(|t| t.coef * t.time_factor(s))
            .sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(self.terms.iter().chain(&other.terms).cloned().collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, c: T) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| Term {
                    coef: t.coef * c,
                    ..t.clone()
                })
                .collect(),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.mul(b));
            }
        }
        Self::from_terms(terms)
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    pub fn time_breaks(&self) -> Vec<T> {
        let mut b: Vec<T> = self.terms.iter().flat_map(|t| prim_breaks(&t.time)).collect();
        b.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoint"));
        b.dedup();
        b
    }

    pub fn space_breaks(&self, axis: usize) -> Vec<T> {
        let mut b: Vec<T> = self
            .terms
            .iter()
            .filter_map(|t| t.space.get(axis))
            .flat_map(|p| prim_breaks(p))
            .collect();
        b.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoint"));
        b.dedup();
        b
    }

    /// Breakpoints in `|z|`.
    pub fn jump_breaks(&self) -> Vec<T> {
        let mut b: Vec<T> = self
            .terms
            .iter()
            .flat_map(|t| prim_breaks(&t.jump))
            .map(|v| v.abs())
            .collect();
        b.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoint"));
        b.dedup();
        b
    }

    /// `∫_a^b G(s) ds` for a time-only integrand.
    pub fn integrate_time(&self, a: T, b: T, cfg: &QuadConfig) -> Result<T> {
        if !self.is_time_only() {
            return Err(IntegrandError::NotTimeOnly);
        }
        let mut v = T::zero();
        for t in &self.terms {
            v += t.coef * t.time_integral(a, b, cfg)?;
        }
        Ok(v)
    }

    /// The time-only density `s ↦ ∫_B ∫_Γ H(s,x,z) ν(dz) dx`.
    pub fn compensator_density(
        &self,
        space: &SpaceBox<T>,
        m: &LevyMeasure<T>,
        shell: &Shell<T>,
        cfg: &QuadConfig,
    ) -> Result<DetIntegrand<T>> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let sb = t.space_integral(space, None, cfg)?;
            if sb == T::zero() {
                continue;
            }
            let sj = t.jump_integral(m, shell, None)?;
            terms.push(Term {
                coef: t.coef * sb * sj,
                time: t.time.clone(),
                space: Vec::new(),
                jump: Vec::new(),
            });
        }
        Ok(DetIntegrand::from_terms(terms))
    }

    /// The space-time-only density `(s,x) ↦ ∫_Γ H(s,x,z) ν(dz)`.
    pub fn jump_marginal(&self, m: &LevyMeasure<T>, shell: &Shell<T>) -> Result<DetIntegrand<T>> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let sj = t.jump_integral(m, shell, None)?;
            terms.push(Term {
                coef: t.coef * sj,
                jump: Vec::new(),
                ..t.clone()
            });
        }
        Ok(DetIntegrand::from_terms(terms))
    }

    /// `∫_0^T ∫_B ∫_Γ |H|^p dν dx ds` for a single factorized term.
    pub fn abs_pow_integral(
        &self,
        horizon: T,
        space: &SpaceBox<T>,
        m: &LevyMeasure<T>,
        shell: &Shell<T>,
        p: T,
        cfg: &QuadConfig,
    ) -> Result<T> {
        let t = self.single_term()?;
        let Some(t) = t else { return Ok(T::zero()) };
        let time = integrate_prims(&t.time, T::zero(), horizon, Some(p), cfg)?;
        let sp = t.space_integral(space, Some(p), cfg)?;
        let j = if t.jump.is_empty() {
            m.shell_mass(shell)?
        } else {
            t.jump_integral(m, shell, Some(p))?
        };
        Ok(t.coef.abs().powf(p) * time * sp * j)
    }

    fn single_term(&self) -> Result<Option<&Term<T>>> {
        match self.terms.len() {
            0 => Ok(None),
            1 => Ok(Some(&self.terms[0])),
            n => Err(IntegrandError::NotFactorizable { terms: n }),
        }
    }

    /// Radius of a cube containing the spatial support, `∞` if unbounded.
    pub fn space_support_radius(&self, dim: usize) -> T {
        self.terms
            .iter()
            .map(|t| t.space_support_radius(dim))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Support in time as `(lo, hi)` if every term carries a time indicator.
    pub fn time_support(&self) -> Option<(T, T)> {
        let mut out: Option<(T, T)> = None;
        for t in &self.terms {
            let s = t
                .time
                .iter()
                .filter_map(|p| p.support())
                .fold(None, |acc: Option<(T, T)>, (lo, hi)| {
                    Some(match acc {
                        None => (lo, hi),
                        Some((a, b)) => (a.max(lo), b.min(hi)),
                    })
                })?;
            out = Some(match out {
                None => s,
                Some((a, b)) => (a.min(s.0), b.max(s.1)),
            });
        }
        out
    }

    /// Per-axis support as `(lo, hi)` when every term bounds that axis.
    pub fn space_support(&self, axis: usize) -> Option<(T, T)> {
        let mut out: Option<(T, T)> = None;
        for t in &self.terms {
            let s = t
                .space
                .get(axis)?
                .iter()
                .filter_map(|p| p.support())
                .fold(None, |acc: Option<(T, T)>, (lo, hi)| {
                    Some(match acc {
                        None => (lo, hi),
                        Some((a, b)) => (a.max(lo), b.min(hi)),
                    })
                })?;
            out = Some(match out {
                None => s,
                Some((a, b)) => (a.min(s.0), b.max(s.1)),
            });
        }
        out
    }

    /// Support in `|z|` as `(lo, hi)` when every term carries an `abs` jump
    /// indicator.
    pub fn jump_abs_support(&self) -> Option<(T, T)> {
        let mut out: Option<(T, T)> = None;
        for t in &self.terms {
            let s = t
                .jump
                .iter()
                .filter_map(|p| match p {
                    Prim::Indicator { lo, hi, abs: true } => Some((*lo, *hi)),
                    _ => None,
                })
                .fold(None, |acc: Option<(T, T)>, (lo, hi)| {
                    Some(match acc {
                        None => (lo, hi),
                        Some((a, b)) => (a.max(lo), b.min(hi)),
                    })
                })?;
            out = Some(match out {
                None => s,
                Some((a, b)) => (a.min(s.0), b.max(s.1)),
            });
        }
        out
    }
}

/// Variable a primitive applies to in an [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    #[serde(rename = "t", alias = "s")]
    Time,
    #[serde(rename = "x1", alias = "x")]
    X1,
    #[serde(rename = "x2")]
    X2,
    #[serde(rename = "x3")]
    X3,
    #[serde(rename = "z")]
    Jump,
}

impl Var {
    fn axis(self) -> Option<usize> {
        match self {
            Var::X1 => Some(0),
            Var::X2 => Some(1),
            Var::X3 => Some(2),
            _ => None,
        }
    }

    fn from_axis(k: usize) -> Var {
        match k {
            0 => Var::X1,
            1 => Var::X2,
            _ => Var::X3,
        }
    }
}

/// JSON expression tree for integrands.
///
/// ```json
/// {"op": "product", "args": [
///     {"op": "exp", "var": "t", "rate": -1.0},
///     {"op": "poly", "var": "z", "coeffs": [0.0, 1.0]}
/// ]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "op", rename_all = "snake_case")]
pub enum Expr<T> {
    Const { value: T },
    Poly { var: Var, coeffs: Vec<T> },
    Exp {
        var: Var,
        rate: T,
        #[serde(default)]
        abs: bool,
    },
    Cos {
        var: Var,
        freq: T,
        #[serde(default)]
        phase: T,
    },
    Sin {
        var: Var,
        freq: T,
        #[serde(default)]
        phase: T,
    },
    Indicator {
        var: Var,
        lo: T,
        hi: T,
        #[serde(default)]
        abs: bool,
    },
    AbsPow { var: Var, p: T },
    Sum { args: Vec<Expr<T>> },
    Product { args: Vec<Expr<T>> },
    Scale { by: T, arg: Box<Expr<T>> },
    Neg { arg: Box<Expr<T>> },
}

impl<T: Real> Expr<T> {
    fn prim(&self) -> Option<(Var, Prim<T>)> {
        Some(match self.clone() {
            Expr::Poly { var, coeffs } => (var, Prim::Poly { coeffs }),
            Expr::Exp { var, rate, abs } => (var, Prim::Exp { rate, abs }),
            Expr::Cos { var, freq, phase } => (var, Prim::Cos { freq, phase }),
            Expr::Sin { var, freq, phase } => (var, Prim::Sin { freq, phase }),
            Expr::Indicator { var, lo, hi, abs } => (var, Prim::Indicator { lo, hi, abs }),
            Expr::AbsPow { var, p } => (var, Prim::AbsPow { p }),
            _ => return None,
        })
    }

    fn from_prim(var: Var, p: Prim<T>) -> Self {
        match p {
            Prim::Poly { coeffs } => Expr::Poly { var, coeffs },
            Prim::Exp { rate, abs } => Expr::Exp { var, rate, abs },
            Prim::Cos { freq, phase } => Expr::Cos { var, freq, phase },
            Prim::Sin { freq, phase } => Expr::Sin { var, freq, phase },
            Prim::Indicator { lo, hi, abs } => Expr::Indicator { var, lo, hi, abs },
            Prim::AbsPow { p } => Expr::AbsPow { var, p },
        }
    }
}

impl<T: Real> TryFrom<Expr<T>> for DetIntegrand<T> {
    type Error = IntegrandError;
    fn try_from(e: Expr<T>) -> Result<Self> {
        if let Some((var, prim)) = e.prim() {
            validate_prim(&prim)?;
            return Ok(match (var, var.axis()) {
                (Var::Time, _) => DetIntegrand::time(prim),
                (Var::Jump, _) => DetIntegrand::jump(prim),
                (_, Some(k)) => DetIntegrand::space(k, prim),
                _ => unreachable!(),
            });
        }
        Ok(match e {
            Expr::Const { value } => {
                if !value.is_finite() {
                    return Err(IntegrandError::InvalidExpr("non-finite constant".into()));
                }
                DetIntegrand::constant(value)
            }
            Expr::Sum { args } => args
                .into_iter()
                .try_fold(DetIntegrand::zero(), |acc, a| -> Result<_> {
                    Ok(acc.add(&DetIntegrand::try_from(a)?))
                })?,
            Expr::Product { args } => {
                if args.is_empty() {
                    return Err(IntegrandError::InvalidExpr("empty product".into()));
                }
                args.into_iter()
                    .try_fold(DetIntegrand::constant(T::one()), |acc, a| -> Result<_> {
                        Ok(acc.mul(&DetIntegrand::try_from(a)?))
                    })?
            }
            Expr::Scale { by, arg } => DetIntegrand::try_from(*arg)?.scale(by),
            Expr::Neg { arg } => DetIntegrand::try_from(*arg)?.scale(-T::one()),
            _ => unreachable!("primitives handled above"),
        })
    }
}

fn validate_prim<T: Real>(p: &Prim<T>) -> Result<()> {
    let ok = match p {
        Prim::Poly { coeffs } => !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite()),
        Prim::Exp { rate, .. } => rate.is_finite(),
        Prim::Cos { freq, phase } | Prim::Sin { freq, phase } => freq.is_finite() && phase.is_finite(),
        Prim::Indicator { lo, hi, abs } => {
            lo.is_finite() && hi.is_finite() && lo < hi && (!*abs || *lo >= T::zero())
        }
        Prim::AbsPow { p } => p.is_finite() && *p >= T::zero(),
    };
    if ok {
        Ok(())
    } else {
        Err(IntegrandError::InvalidExpr(format!("malformed primitive {p:?}")))
    }
}

impl<T: Real> From<DetIntegrand<T>> for Expr<T> {
    fn from(h: DetIntegrand<T>) -> Self {
        let mut terms = Vec::with_capacity(h.terms.len());
        for t in h.terms {
            let mut args = Vec::new();
            args.extend(t.time.into_iter().map(|p| Expr::from_prim(Var::Time, p)));
            for (k, prims) in t.space.into_iter().enumerate() {
                args.extend(prims.into_iter().map(|p| Expr::from_prim(Var::from_axis(k), p)));
            }
            args.extend(t.jump.into_iter().map(|p| Expr::from_prim(Var::Jump, p)));
            let body = if args.is_empty() {
                Expr::Const { value: T::one() }
            } else {
                Expr::Product { args }
            };
            terms.push(if t.coef == T::one() {
                body
            } else {
                Expr::Scale {
                    by: t.coef,
                    arg: Box::new(body),
                }
            });
        }
        Expr::Sum { args: terms }
    }
}

/// Checks that `dim` axes suffice for `h`.
pub fn check_dim<T: Real>(h: &DetIntegrand<T>, dim: usize) -> Result<()> {
    if h.space_dim() > dim.min(MAX_DIM) {
        return Err(IntegrandError::InvalidExpr(format!(
            "integrand uses axis x{} but the window has dimension {dim}",
            h.space_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    #[test]
    fn antiderivatives_match_quadrature() {
        let prims = vec![
            Prim::Poly {
                coeffs: vec![1.0, -2.0, 0.5],
            },
            Prim::Exp {
                rate: -1.3,
                abs: false,
            },
            Prim::Exp {
                rate: -0.7,
                abs: true,
            },
            Prim::Cos {
                freq: 2.0,
                phase: 0.3,
            },
            Prim::Sin {
                freq: 1.5,
                phase: -0.2,
            },
            Prim::Indicator {
                lo: -0.4,
                hi: 0.9,
                abs: false,
            },
            Prim::Indicator {
                lo: 0.2,
                hi: 0.6,
                abs: true,
            },
            Prim::AbsPow { p: 2.5 },
        ];
        for p in prims {
            let (a, b): (f64, f64) = (-1.1, 1.7);
            let exact = p.antiderivative(b).unwrap() - p.antiderivative(a).unwrap();
            let q = quad::integrate_with_breaks(|u| p.eval(u), a, b, &p.breaks(), &cfg())
                .unwrap()
                .value;
            assert!((exact - q).abs() < 1e-12, "{p:?}: {exact} vs {q}");
        }
    }

    #[test]
    fn product_distributes_over_sums() {
        let a = DetIntegrand::<f64>::time(Prim::Poly {
            coeffs: vec![1.0, 1.0],
        })
        .add(&DetIntegrand::z());
        let b = DetIntegrand::space(0, Prim::Exp { rate: -1.0, abs: true }).add(&DetIntegrand::constant(2.0));
        let p = a.mul(&b);
        for &(s, x, z) in &[(0.3, 0.7, -0.4), (1.2, -2.0, 0.9)] {
            let want = a.eval(s, &[x], z) * b.eval(s, &[x], z);
            assert!((p.eval(s, &[x], z) - want).abs() < 1e-14);
        }
        assert_eq!(p.terms().len(), 4);
    }

    #[test]
    fn square_merges_exponentials_and_polys() {
        let h = DetIntegrand::<f64>::space(0, Prim::Exp { rate: -1.0, abs: true }).mul(&DetIntegrand::z());
        let sq = h.square();
        assert_eq!(sq.terms().len(), 1);
        let t = &sq.terms()[0];
        assert_eq!(
            t.space[0],
            vec![Prim::Exp {
                rate: -2.0,
                abs: true
            }]
        );
        assert_eq!(
            t.jump,
            vec![Prim::Poly {
                coeffs: vec![0.0, 0.0, 1.0]
            }]
        );
    }

    #[test]
    fn difference_with_itself_is_zero() {
        let h = DetIntegrand::<f64>::time(Prim::Cos { freq: 1.0, phase: 0.0 }).mul(&DetIntegrand::z());
        let d = h.sub(&h);
        assert!(d.eval(0.4, &[0.1], 0.3).abs() < 1e-15);
    }

    #[test]
    fn expression_json_roundtrip() {
        let json = r#"{"op":"sum","args":[
            {"op":"product","args":[{"op":"exp","var":"t","rate":-1.0},{"op":"poly","var":"z","coeffs":[0.0,1.0]}]},
            {"op":"scale","by":0.5,"arg":{"op":"indicator","var":"x1","lo":0.0,"hi":0.5}}
        ]}"#;
        let h: DetIntegrand<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(h.terms().len(), 2);
        assert!((h.eval(1.0, &[0.25], 2.0) - (2.0 * (-1.0f64).exp() + 0.5)).abs() < 1e-15);
        let back: DetIntegrand<f64> = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn malformed_expressions_rejected() {
        for bad in [
            r#"{"op":"indicator","var":"t","lo":1.0,"hi":0.0}"#,
            r#"{"op":"poly","var":"z","coeffs":[]}"#,
            r#"{"op":"product","args":[]}"#,
            r#"{"op":"exp","var":"q","rate":1.0}"#,
            r#"{"op":"abs_pow","var":"z","p":-1.0}"#,
        ] {
            assert!(serde_json::from_str::<DetIntegrand<f64>>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn outside_cube_matches_closed_form() {
        // ∫_{|x|>a} e^{-2|x|} dx = e^{-2a}
        let h = DetIntegrand::<f64>::space(0, Prim::Exp { rate: -2.0, abs: true });
        let t = &h.terms()[0];
        for a in [0.0, 0.5, 3.0] {
            let v = t.space_integral_outside_cube(a, 1, None, &cfg()).unwrap();
            assert!((v - (-2.0 * a).exp()).abs() < 1e-14);
        }
        // 2-d: complement of the cube for e^{-|x1|-|x2|}
        let h2 = h.mul(&DetIntegrand::space(1, Prim::Exp { rate: -2.0, abs: true }));
        let v = h2.terms()[0].space_integral_outside_cube(0.5, 2, None, &cfg()).unwrap();
        let inside = (1.0 - (-1.0f64).exp()).powi(2);
        assert!((v - (1.0 - inside)).abs() < 1e-13);
    }

    #[test]
    fn non_decaying_space_factor_detected() {
        let h = DetIntegrand::<f64>::space(0, Prim::Cos { freq: 1.0, phase: 0.0 });
        assert!(matches!(
            h.terms()[0].space_integral_outside_cube(1.0, 1, None, &cfg()),
            Err(IntegrandError::NonDecaying { axis: 0 })
        ));
        let one = DetIntegrand::<f64>::constant(1.0);
        assert!(one.terms()[0].space_integral_outside_cube(1.0, 1, None, &cfg()).is_err());
    }

    #[test]
    fn compensator_density_factorizes() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let shell = Shell::new(0.5, 1.0).unwrap();
        let b = SpaceBox::interval(0.0, 2.0).unwrap();
        let h = DetIntegrand::time(Prim::Exp { rate: -1.0, abs: false })
            .mul(&DetIntegrand::jump(Prim::AbsPow { p: 1.0 }));
        let d = h.compensator_density(&b, &m, &shell, &cfg()).unwrap();
        assert!(d.is_time_only());
        // ∫_{0.5<|z|≤1} |z| |z|^{-2} dz = 2 ln 2, |B| = 2
        let want = 2.0 * 2.0 * 2f64.ln() * (-0.3f64).exp();
        assert!((d.eval_time(0.3) - want).abs() < 1e-14);
    }

    #[test]
    fn orders_at_zero() {
        assert_eq!(
            Prim::Poly {
                coeffs: vec![0.0, 0.0, 3.0]
            }
            .order_at_zero(),
            2.0
        );
        assert!(Prim::<f64>::Indicator {
            lo: 0.1,
            hi: 1.0,
            abs: true
        }
        .order_at_zero()
        .is_infinite());
        assert_eq!(
            Prim::Indicator {
                lo: -1.0,
                hi: 1.0,
                abs: false
            }
            .order_at_zero(),
            0.0
        );
        assert_eq!(Prim::<f64>::AbsPow { p: 1.5 }.order_at_zero(), 1.5);
    }

    #[test]
    fn support_radius() {
        let h = DetIntegrand::<f64>::box_indicator(&SpaceBox::interval(-1.0, 2.0).unwrap());
        assert_eq!(h.space_support_radius(1), 2.0);
        assert!(DetIntegrand::<f64>::z().space_support_radius(1).is_infinite());
    }
}
