//! Lévy measures on the punctured real line.
//!
//! Three families are supported, all with finite second moment:
//!
//! * `DiscreteAtoms`: a finite sum of weighted point masses `Σ wⱼ δ_{zⱼ}`.
//! * `TruncatedStable`: density `c |z|^{-α-1}` on `0 < |z| ≤ R`.
//! * `TemperedStable`: density `c |z|^{-α-1} e^{-θ|z|}`.
//!
//! Shell masses and moments are closed form where an antiderivative exists
//! and adaptive quadrature otherwise. Integrals that reach down to zero use
//! the substitution `r = b·u^k` with `k = 1/(q - α)`, where `q` is the order
//! at which the integrand vanishes at the origin, so that the integrable
//! singularity of the density is removed before quadrature.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, GaussLegendre, QuadConfig, QuadError};
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid shell ({lo}, {hi}]: need 0 <= lo < hi")]
    InvalidShell { lo: f64, hi: f64 },
    #[error("infinite mass on shell ({lo}, {hi}]; use a shell bounded away from zero")]
    InfiniteMass { lo: f64, hi: f64 },
    #[error("infinite moment of order {order} on shell ({lo}, {hi}]")]
    InfiniteMoment { order: f64, lo: f64, hi: f64 },
    #[error("shell ({lo}, {hi}] carries no mass")]
    EmptyShell { lo: f64, hi: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

pub type Result<T, E = MeasureError> = std::result::Result<T, E>;

/// The jump-size annulus `{lo < |z| ≤ hi}`. `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Real",
    try_from = "RawShell<T>",
    into = "RawShell<T>"
)]
pub struct Shell<T> {
    lo: T,
    hi: T,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RawShell<T> {
    lo: T,
    /// Absent or `null` means unbounded.
    #[serde(default)]
    hi: Option<T>,
}

impl<T: Real> TryFrom<RawShell<T>> for Shell<T> {
    type Error = MeasureError;
    fn try_from(raw: RawShell<T>) -> Result<Self> {
        Shell::new(raw.lo, raw.hi.unwrap_or_else(T::infinity))
    }
}

impl<T: Real> From<Shell<T>> for RawShell<T> {
    fn from(s: Shell<T>) -> Self {
        RawShell {
            lo: s.lo,
            hi: if s.hi.is_finite() { Some(s.hi) } else { None },
        }
    }
}

impl<T: Real> Shell<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo >= T::zero()) || !(hi > lo) || lo.is_infinite() {
            return Err(MeasureError::InvalidShell {
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        Ok(Self { lo, hi })
    }

    /// All of `ℝ₀`.
    pub fn full() -> Self {
        Self {
            lo: T::zero(),
            hi: T::infinity(),
        }
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    #[inline]
    pub fn contains(&self, z: T) -> bool {
        let a = z.abs();
        a > self.lo && a <= self.hi
    }

    pub fn contains_shell(&self, other: &Shell<T>) -> bool {
        other.lo >= self.lo && other.hi <= self.hi
    }

    /// Intersection, or `None` when empty.
    pub fn intersect(&self, other: &Shell<T>) -> Option<Shell<T>> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (hi > lo).then_some(Shell { lo, hi })
    }

    /// The parts `{lo < |z| ≤ at}` and `{at < |z| ≤ hi}`; either may be empty.
    pub fn split_at(&self, at: T) -> (Option<Shell<T>>, Option<Shell<T>>) {
        let small = Shell {
            lo: self.lo,
            hi: self.hi.min(at),
        };
        let big = Shell {
            lo: self.lo.max(at),
            hi: self.hi,
        };
        (
            (small.hi > small.lo).then_some(small),
            (big.hi > big.lo).then_some(big),
        )
    }

    fn err_mass(&self) -> MeasureError {
        MeasureError::InfiniteMass {
            lo: self.lo.as_f64(),
            hi: self.hi.as_f64(),
        }
    }

    fn err_moment(&self, order: T) -> MeasureError {
        MeasureError::InfiniteMoment {
            order: order.as_f64(),
            lo: self.lo.as_f64(),
            hi: self.hi.as_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Atom<T> {
    pub z: T,
    pub w: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "family", rename_all = "snake_case")]
pub enum Family<T> {
    DiscreteAtoms { atoms: Vec<Atom<T>> },
    TruncatedStable { alpha: T, c: T, r: T },
    TemperedStable { alpha: T, c: T, theta: T },
}

/// A Lévy measure with finite variance. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawMeasure<T>")]
pub struct LevyMeasure<T> {
    #[serde(flatten)]
    family: Family<T>,
    #[serde(default, skip_serializing_if = "is_default_quad")]
    quad: QuadConfig,
}

fn is_default_quad(q: &QuadConfig) -> bool {
    *q == QuadConfig::default()
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct RawMeasure<T> {
    #[serde(flatten)]
    family: Family<T>,
    #[serde(default)]
    quad: QuadConfig,
}

impl<T: Real> TryFrom<RawMeasure<T>> for LevyMeasure<T> {
    type Error = MeasureError;
    fn try_from(raw: RawMeasure<T>) -> Result<Self> {
        Ok(Self::new(raw.family)?.with_quad(raw.quad))
    }
}

fn check_stable<T: Real>(alpha: T, c: T) -> Result<()> {
    if !(alpha > T::zero() && alpha < T::lit(2.0)) {
        return Err(MeasureError::InvalidParameter(format!(
            "alpha must lie in (0, 2), got {alpha}"
        )));
    }
    if !(c > T::zero()) || !c.is_finite() {
        return Err(MeasureError::InvalidParameter(format!(
            "scale c must be positive, got {c}"
        )));
    }
    Ok(())
}

impl<T: Real> LevyMeasure<T> {
    pub fn new(family: Family<T>) -> Result<Self> {
        match &family {
            Family::DiscreteAtoms { atoms } => {
                for a in atoms {
                    if a.z == T::zero() || !a.z.is_finite() {
                        return Err(MeasureError::InvalidParameter(format!(
                            "atom location must be finite and nonzero, got {}",
                            a.z
                        )));
                    }
                    if !(a.w > T::zero()) || !a.w.is_finite() {
                        return Err(MeasureError::InvalidParameter(format!(
                            "atom weight must be positive and finite, got {}",
                            a.w
                        )));
                    }
                }
            }
            Family::TruncatedStable { alpha, c, r } => {
                check_stable(*alpha, *c)?;
                if !(*r > T::zero()) || !r.is_finite() {
                    return Err(MeasureError::InvalidParameter(format!(
                        "truncation radius must be positive and finite, got {r}"
                    )));
                }
            }
            Family::TemperedStable { alpha, c, theta } => {
                check_stable(*alpha, *c)?;
                if !(*theta > T::zero()) || !theta.is_finite() {
                    return Err(MeasureError::InvalidParameter(format!(
                        "tempering rate must be positive, got {theta}"
                    )));
                }
            }
        }
        Ok(Self {
            family,
            quad: QuadConfig::default(),
        })
    }

    pub fn atoms(atoms: impl IntoIterator<Item = (T, T)>) -> Result<Self> {
        Self::new(Family::DiscreteAtoms {
            atoms: atoms.into_iter().map(|(z, w)| Atom { z, w }).collect(),
        })
    }

    pub fn truncated_stable(alpha: T, c: T, r: T) -> Result<Self> {
        Self::new(Family::TruncatedStable { alpha, c, r })
    }

    pub fn tempered_stable(alpha: T, c: T, theta: T) -> Result<Self> {
        Self::new(Family::TemperedStable { alpha, c, theta })
    }

    pub fn with_quad(mut self, quad: QuadConfig) -> Self {
        self.quad = quad;
        self
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn quad(&self) -> &QuadConfig {
        &self.quad
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.family {
            Family::DiscreteAtoms { atoms } => {
                let mut pos: Vec<(T, T)> = atoms
                    .iter()
                    .filter(|a| a.z > T::zero())
                    .map(|a| (a.z, a.w))
                    .collect();
                let mut neg: Vec<(T, T)> = atoms
                    .iter()
                    .filter(|a| a.z < T::zero())
                    .map(|a| (-a.z, a.w))
                    .collect();
                let key = |a: &(T, T), b: &(T, T)| {
                    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
                };
                pos.sort_by(key);
                neg.sort_by(key);
                pos == neg
            }
            _ => true,
        }
    }

    /// Largest `|z|` in the support (`∞` for the tempered family).
    pub fn support_radius(&self) -> T {
        match &self.family {
            Family::DiscreteAtoms { atoms } => atoms
                .iter()
                .map(|a| a.z.abs())
                .fold(T::zero(), |m, x| m.max(x)),
            Family::TruncatedStable { r, .. } => *r,
            Family::TemperedStable { .. } => T::infinity(),
        }
    }

    /// `true` when ν has finite total mass near the origin.
    pub fn is_finite_activity(&self) -> bool {
        matches!(self.family, Family::DiscreteAtoms { .. })
    }

    /// `v = ∫ z² ν(dz)`.
    pub fn variance(&self) -> Result<T> {
        self.shell_moment(&Shell::full(), T::lit(2.0), false)
    }

    /// `m_p = ∫ |z|^p ν(dz)`.
    pub fn abs_moment(&self, p: T) -> Result<T> {
        self.shell_moment(&Shell::full(), p, false)
    }

    /// `ν({lo < |z| ≤ hi})`.
    pub fn shell_mass(&self, s: &Shell<T>) -> Result<T> {
        match &self.family {
            Family::DiscreteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| s.contains(a.z))
                .map(|a| a.w)
                .sum()),
            Family::TruncatedStable { alpha, c, r } => {
                let hi = s.hi.min(*r);
                if s.lo >= hi {
                    return Ok(T::zero());
                }
                if s.lo == T::zero() {
                    return Err(s.err_mass());
                }
                Ok(T::lit(2.0) * *c / *alpha * (s.lo.powf(-*alpha) - hi.powf(-*alpha)))
            }
            Family::TemperedStable { .. } => {
                if s.lo == T::zero() {
                    return Err(s.err_mass());
                }
                self.radial_integral(|_| T::lit(2.0), s, None, &[])
            }
        }
    }

    /// `∫_shell |z|^p ν(dz)`, or `∫_shell sign(z)|z|^p ν(dz)` when `signed`.
    pub fn shell_moment(&self, s: &Shell<T>, p: T, signed: bool) -> Result<T> {
        if !(p >= T::zero()) {
            return Err(MeasureError::InvalidParameter(format!(
                "moment order must be nonnegative, got {p}"
            )));
        }
        match &self.family {
            Family::DiscreteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| s.contains(a.z))
                .map(|a| {
                    let m = a.w * a.z.abs().powf(p);
                    if signed {
                        m * a.z.signum()
                    } else {
                        m
                    }
                })
                .sum()),
            Family::TruncatedStable { alpha, c, r } => {
                let hi = s.hi.min(*r);
                if s.lo >= hi {
                    return Ok(T::zero());
                }
                if s.lo == T::zero() && p <= *alpha {
                    return Err(s.err_moment(p));
                }
                if signed {
                    return Ok(T::zero());
                }
                let two_c = T::lit(2.0) * *c;
                let e = p - *alpha;
                if e == T::zero() {
                    Ok(two_c * (hi / s.lo).ln())
                } else {
                    Ok(two_c * (hi.powf(e) - s.lo.powf(e)) / e)
                }
            }
            Family::TemperedStable { alpha, .. } => {
                if s.lo == T::zero() && p <= *alpha {
                    return Err(s.err_moment(p));
                }
                let m = self.radial_integral(|r| T::lit(2.0) * r.powf(p), s, Some(p), &[])?;
                Ok(if signed { T::zero() } else { m })
            }
        }
    }

    /// `∫_shell f(z) ν(dz)`.
    ///
    /// `order_at_zero` is the order `q` with `f(z) = O(|z|^q)` near the
    /// origin (`None` if `f(0) ≠ 0`, `Some(∞)` if `f` vanishes near the
    /// origin); it certifies convergence when the shell reaches zero.
    /// `breaks` are values of `|z|` where `f` is not smooth.
    pub fn nu_integral<F>(
        &self,
        s: &Shell<T>,
        f: F,
        order_at_zero: Option<T>,
        breaks: &[T],
    ) -> Result<T>
    where
        F: Fn(T) -> T,
    {
        match &self.family {
            Family::DiscreteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| s.contains(a.z))
                .map(|a| a.w * f(a.z))
                .sum()),
            _ => self.radial_integral(|r| f(r) + f(-r), s, order_at_zero, breaks),
        }
    }

    /// `Ψ(u) = ∫(e^{iuz} - 1 - iuz) ν(dz)`.
    pub fn psi(&self, u: T) -> Result<Complex<T>> {
        self.psi_shell(&Shell::full(), u)
    }

    /// Shell-restricted exponent `∫_shell (e^{iuz} - 1 - iuz) ν(dz)`.
    pub fn psi_shell(&self, s: &Shell<T>, u: T) -> Result<Complex<T>> {
        if u == T::zero() {
            return Ok(Complex::new(T::zero(), T::zero()));
        }
        match &self.family {
            Family::DiscreteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| s.contains(a.z))
                .map(|a| {
                    let x = u * a.z;
                    Complex::new(a.w * cos_m1(x), a.w * (x.sin() - x))
                })
                .fold(Complex::new(T::zero(), T::zero()), |acc, c| acc + c)),
            _ => {
                let re = self.radial_integral(
                    |r| T::lit(2.0) * cos_m1(u * r),
                    s,
                    Some(T::lit(2.0)),
                    &[],
                )?;
                Ok(Complex::new(re, T::zero()))
            }
        }
    }

    /// `∫_shell (e^{iuz} - 1 - iuz·1_{|z| ≤ split}) ν(dz)`, the Lévy–Khintchine
    /// exponent of the shell-restricted noise with truncation at `split`.
    pub fn levy_khintchine_shell(&self, s: &Shell<T>, u: T, split: T) -> Result<Complex<T>> {
        let (small, big) = s.split_at(split);
        let mut out = match small {
            Some(sm) => self.psi_shell(&sm, u)?,
            None => Complex::new(T::zero(), T::zero()),
        };
        if let Some(b) = big {
            let re = self.nu_integral(&b, |z| cos_m1(u * z), Some(T::lit(2.0)), &[])?;
            let im = self.nu_integral(&b, |z| (u * z).sin(), Some(T::one()), &[])?;
            out += Complex::new(re, im);
        }
        Ok(out)
    }

    /// Draws `z` from ν restricted to `s`, normalized.
    pub fn sample_shell<R: Rng + ?Sized>(&self, s: &Shell<T>, rng: &mut R) -> Result<T> {
        match &self.family {
            Family::DiscreteAtoms { atoms } => {
                let total = self.shell_mass(s)?;
                if !(total > T::zero()) {
                    return Err(empty(s));
                }
                let target = T::lit(rng.random::<f64>()) * total;
                let mut acc = T::zero();
                let mut last = None;
                for a in atoms.iter().filter(|a| s.contains(a.z)) {
                    acc += a.w;
                    last = Some(a.z);
                    if target < acc {
                        return Ok(a.z);
                    }
                }
                Ok(last.expect("nonempty shell has an atom"))
            }
            Family::TruncatedStable { alpha, r, .. } => {
                let hi = s.hi.min(*r);
                if s.lo >= hi {
                    return Err(empty(s));
                }
                if s.lo == T::zero() {
                    return Err(s.err_mass());
                }
                let radius = inverse_pareto(*alpha, s.lo, hi, T::lit(rng.random::<f64>()));
                Ok(if rng.random::<bool>() { radius } else { -radius })
            }
            Family::TemperedStable { alpha, theta, .. } => {
                if s.lo == T::zero() {
                    return Err(s.err_mass());
                }
                loop {
                    let radius = inverse_pareto(*alpha, s.lo, s.hi, T::lit(rng.random::<f64>()));
                    let accept = (-*theta * (radius - s.lo)).exp();
                    if T::lit(rng.random::<f64>()) < accept {
                        return Ok(if rng.random::<bool>() { radius } else { -radius });
                    }
                }
            }
        }
    }

    /// Fixed tensor rule `(zₖ, wₖ)` with `Σ wₖ f(zₖ) ≈ ∫_shell f dν`.
    ///
    /// Stable families get Gauss–Legendre panels on a geometric grid of ratio
    /// `panel_ratio` in `|z|`, mirrored to both signs. The shell must have
    /// finite mass.
    pub fn nu_rule(
        &self,
        s: &Shell<T>,
        nodes_per_panel: usize,
        panel_ratio: T,
        breaks: &[T],
    ) -> Result<Vec<(T, T)>> {
        match &self.family {
            Family::DiscreteAtoms { atoms } => Ok(atoms
                .iter()
                .filter(|a| s.contains(a.z))
                .map(|a| (a.z, a.w))
                .collect()),
            Family::TruncatedStable { .. } | Family::TemperedStable { .. } => {
                if s.lo == T::zero() {
                    return Err(s.err_mass());
                }
                let hi = match &self.family {
                    Family::TruncatedStable { r, .. } => s.hi.min(*r),
                    Family::TemperedStable { theta, .. } => {
                        s.hi.min(s.lo.max(T::one()) + T::lit(40.0) / *theta)
                    }
                    Family::DiscreteAtoms { .. } => unreachable!(),
                };
                if s.lo >= hi {
                    return Ok(Vec::new());
                }
                let cuts = geometric_cuts(s.lo, hi, panel_ratio, breaks);
                let gl = GaussLegendre::cached(nodes_per_panel.max(1));
                let mut out = Vec::with_capacity(2 * gl.len() * (cuts.len() - 1));
                for w in cuts.windows(2) {
                    for (r, wt) in gl.points(w[0], w[1]) {
                        let d = wt * self.radial_density(r);
                        out.push((-r, d));
                        out.push((r, d));
                    }
                }
                Ok(out)
            }
        }
    }

    /// One-sided density in `r = |z|` for the stable families.
    fn radial_density(&self, r: T) -> T {
        match &self.family {
            Family::TruncatedStable { alpha, c, r: big_r } => {
                if r > *big_r {
                    T::zero()
                } else {
                    *c * r.powf(-*alpha - T::one())
                }
            }
            Family::TemperedStable { alpha, c, theta } => {
                *c * r.powf(-*alpha - T::one()) * (-*theta * r).exp()
            }
            Family::DiscreteAtoms { .. } => T::zero(),
        }
    }

    fn alpha(&self) -> T {
        match &self.family {
            Family::TruncatedStable { alpha, .. } | Family::TemperedStable { alpha, .. } => *alpha,
            Family::DiscreteAtoms { .. } => T::zero(),
        }
    }

    /// `∫_{s.lo}^{s.hi} g(r) ρ(r) dr` for the stable families, where `g` is
    /// already symmetrized (`g(r) = f(r) + f(-r)`).
    fn radial_integral<G>(
        &self,
        g: G,
        s: &Shell<T>,
        order_at_zero: Option<T>,
        breaks: &[T],
    ) -> Result<T>
    where
        G: Fn(T) -> T,
    {
        let alpha = self.alpha();
        let hi = match &self.family {
            Family::TruncatedStable { r, .. } => s.hi.min(*r),
            _ => s.hi,
        };
        if s.lo >= hi {
            return Ok(T::zero());
        }
        let cfg = &self.quad;
        let h = |r: T| {
            if r <= T::zero() {
                T::zero()
            } else {
                g(r) * self.radial_density(r)
            }
        };
        let mut total = T::zero();
        let mut start = s.lo;
        if start == T::zero() {
            let q = match order_at_zero {
                Some(q) if q > alpha => q,
                _ => {
                    let q = order_at_zero.unwrap_or(T::zero());
                    return Err(if order_at_zero.is_some() {
                        s.err_moment(q)
                    } else {
                        s.err_mass()
                    });
                }
            };
            let first_break = breaks
                .iter()
                .copied()
                .filter(|&b| b > T::zero())
                .fold(T::infinity(), |m, b| m.min(b));
            let b = hi.min(first_break).min(T::one());
            if !q.is_finite() {
                // vanishes near zero: plain panels on a geometric grid down to 0
                let cuts = geometric_cuts(T::zero(), hi.min(T::one()), T::lit(2.0), breaks);
                for w in cuts.windows(2) {
                    total += quad::integrate(&h, w[0], w[1], cfg)?.value;
                }
                start = hi.min(T::one());
            } else {
                let k = T::one() / (q - alpha);
                let near = quad::integrate(
                    |u: T| {
                        if u <= T::zero() {
                            return T::zero();
                        }
                        let r = b * u.powf(k);
                        let jac = b * k * u.powf(k - T::one());
                        h(r) * jac
                    },
                    T::zero(),
                    T::one(),
                    cfg,
                )?;
                total += near.value;
                start = b;
            }
        }
        if start >= hi {
            return Ok(total);
        }
        let finite_hi = if hi.is_finite() {
            hi
        } else {
            let theta = match &self.family {
                Family::TemperedStable { theta, .. } => *theta,
                _ => T::one(),
            };
            start.max(T::one()) + T::lit(8.0) / theta
        };
        let cuts = geometric_cuts(start, finite_hi, T::lit(2.0), breaks);
        for w in cuts.windows(2) {
            total += quad::integrate(&h, w[0], w[1], cfg)?.value;
        }
        if !hi.is_finite() {
            let theta = match &self.family {
                Family::TemperedStable { theta, .. } => *theta,
                _ => T::one(),
            };
            let tail_breaks: Vec<T> = breaks
                .iter()
                .copied()
                .filter(|&b| b > finite_hi)
                .map(|b| (b - finite_hi) * theta)
                .collect();
            // x = finite_hi + y/θ, y ∈ [0, ∞)
            let tail = if tail_breaks.is_empty() {
                quad::integrate_to_inf(|y: T| h(finite_hi + y / theta) / theta, T::zero(), cfg)?
            } else {
                let last = tail_breaks.iter().copied().fold(T::zero(), |m, b| m.max(b));
                let inner = quad::integrate_with_breaks(
                    |y: T| h(finite_hi + y / theta) / theta,
                    T::zero(),
                    last,
                    &tail_breaks,
                    cfg,
                )?;
                let outer = quad::integrate_to_inf(
                    |y: T| h(finite_hi + y / theta) / theta,
                    last,
                    cfg,
                )?;
                quad::Quadrature {
                    value: inner.value + outer.value,
                    error: inner.error + outer.error,
                }
            };
            total += tail.value;
        }
        Ok(total)
    }
}

fn empty<T: Real>(s: &Shell<T>) -> MeasureError {
    MeasureError::EmptyShell {
        lo: s.lo.as_f64(),
        hi: s.hi.as_f64(),
    }
}

/// `cos(x) - 1` without cancellation near zero.
#[inline]
pub(crate) fn cos_m1<T: Real>(x: T) -> T {
    let s = (x * T::lit(0.5)).sin();
    -T::lit(2.0) * s * s
}

/// Inverse CDF of the density `∝ r^{-α-1}` on `(lo, hi]`.
fn inverse_pareto<T: Real>(alpha: T, lo: T, hi: T, u: T) -> T {
    let a = lo.powf(-alpha);
    let b = if hi.is_finite() { hi.powf(-alpha) } else { T::zero() };
    let r = (a - u * (a - b)).powf(-T::one() / alpha);
    r.max(lo).min(hi)
}

/// Cut points from `lo` to `hi` with consecutive ratio at most `ratio`,
/// merged with any breakpoints inside the range.
fn geometric_cuts<T: Real>(lo: T, hi: T, ratio: T, breaks: &[T]) -> Vec<T> {
    let mut cuts = vec![lo];
    if lo > T::zero() {
        let mut x = lo * ratio;
        while x < hi {
            cuts.push(x);
            x *= ratio;
        }
    } else {
        let mut x = hi / ratio;
        let mut rev = Vec::new();
        while x > T::lit(1e-300) && rev.len() < 64 {
            rev.push(x);
            x /= ratio;
        }
        cuts.extend(rev.into_iter().rev());
    }
    cuts.extend(breaks.iter().map(|b| b.abs()).filter(|&b| b > lo && b < hi));
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cut"));
    cuts.dedup();
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_atoms() -> LevyMeasure<f64> {
        LevyMeasure::atoms([(1.0, 0.5), (-2.0, 0.25)]).unwrap()
    }

    fn stable() -> LevyMeasure<f64> {
        LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn atom_mass_counts_atoms_in_shell() {
        let s = Shell::new(1.5, f64::INFINITY).unwrap();
        assert_eq!(two_atoms().shell_mass(&s).unwrap(), 0.25);
    }

    #[test]
    fn truncated_stable_mass_closed_form() {
        let s = Shell::new(0.5, 1.0).unwrap();
        assert!((stable().shell_mass(&s).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mass_above_support_is_zero() {
        let s = Shell::new(1.0, 5.0).unwrap();
        assert_eq!(stable().shell_mass(&s).unwrap(), 0.0);
        let s = Shell::new(2.0, f64::INFINITY).unwrap();
        assert_eq!(two_atoms().shell_mass(&s).unwrap(), 0.0);
    }

    #[test]
    fn shell_touching_zero_has_infinite_mass() {
        let s = Shell::new(0.0, 1.0).unwrap();
        assert!(matches!(
            stable().shell_mass(&s),
            Err(MeasureError::InfiniteMass { .. })
        ));
        let t = LevyMeasure::tempered_stable(0.5, 1.0, 1.0).unwrap();
        assert!(matches!(t.shell_mass(&s), Err(MeasureError::InfiniteMass { .. })));
        // finitely many atoms: fine
        assert_eq!(two_atoms().shell_mass(&Shell::full()).unwrap(), 0.75);
    }

    #[test]
    fn moments_of_atoms_and_stable() {
        assert_eq!(two_atoms().shell_moment(&Shell::full(), 2.0, false).unwrap(), 1.5);
        assert!((stable().variance().unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(stable().shell_moment(&Shell::full(), 3.0, true).unwrap(), 0.0);
        assert!(matches!(
            stable().shell_moment(&Shell::full(), 1.0, false),
            Err(MeasureError::InfiniteMoment { .. })
        ));
    }

    #[test]
    fn invalid_shell_rejected() {
        assert!(Shell::new(1.0, 1.0).is_err());
        assert!(Shell::new(-0.1, 1.0).is_err());
        assert!(Shell::<f64>::new(0.5, 0.2).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LevyMeasure::truncated_stable(2.0, 1.0, 1.0).is_err());
        assert!(LevyMeasure::tempered_stable(1.0, -1.0, 1.0).is_err());
        assert!(LevyMeasure::atoms([(0.0, 1.0)]).is_err());
        assert!(LevyMeasure::atoms([(1.0, 0.0)]).is_err());
    }

    #[test]
    fn psi_of_atoms_is_finite_sum() {
        let got = two_atoms().psi(1.0).unwrap();
        let i: Complex<f64> = Complex::new(0.0, 1.0);
        let want = 0.5 * (i.exp() - 1.0 - i) + 0.25 * ((-2.0 * i).exp() - 1.0 + 2.0 * i);
        assert!((got - want).norm() < 1e-15);
        assert_eq!(two_atoms().psi(0.0).unwrap(), Complex::new(0.0, 0.0));
    }

    #[test]
    fn single_atom_sampling_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Shell::new(1.5, 3.0).unwrap();
        for _ in 0..20 {
            assert_eq!(two_atoms().sample_shell(&s, &mut rng).unwrap(), -2.0);
        }
    }

    #[test]
    fn empty_shell_cannot_be_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Shell::new(3.0, 4.0).unwrap();
        assert!(matches!(
            two_atoms().sample_shell(&s, &mut rng),
            Err(MeasureError::EmptyShell { .. })
        ));
        assert!(stable().sample_shell(&s, &mut rng).is_err());
    }

    #[test]
    fn tempered_mass_additive() {
        let t = LevyMeasure::tempered_stable(1.5, 0.7, 2.0).unwrap();
        let whole = t.shell_mass(&Shell::new(0.01, f64::INFINITY).unwrap()).unwrap();
        let a = t.shell_mass(&Shell::new(0.01, 0.3).unwrap()).unwrap();
        let b = t.shell_mass(&Shell::new(0.3, f64::INFINITY).unwrap()).unwrap();
        assert!(((a + b) - whole).abs() <= 1e-12 * whole);
    }

    #[test]
    fn nu_rule_reproduces_mass() {
        let s = Shell::new(0.05, 1.0).unwrap();
        let rule = stable().nu_rule(&s, 16, 2.0, &[]).unwrap();
        let mass: f64 = rule.iter().map(|(_, w)| w).sum();
        let exact = stable().shell_mass(&s).unwrap();
        assert!((mass - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn shell_serde_roundtrip_with_infinite_hi() {
        let s = Shell::new(0.5, f64::INFINITY).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"lo":0.5,"hi":null}"#);
        let back: Shell<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Shell<f64>>(r#"{"lo":2.0,"hi":1.0}"#).is_err());
    }

    #[test]
    fn measure_serde_uses_family_tag() {
        let m: LevyMeasure<f64> =
            serde_json::from_str(r#"{"family":"truncated_stable","alpha":1.0,"c":1.0,"r":1.0}"#)
                .unwrap();
        assert_eq!(m, stable());
        assert!(serde_json::from_str::<LevyMeasure<f64>>(
            r#"{"family":"tempered_stable","alpha":3.0,"c":1.0,"theta":1.0}"#
        )
        .is_err());
    }

    #[test]
    fn single_precision_mass() {
        let m = LevyMeasure::<f32>::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let s = Shell::new(0.5f32, 1.0).unwrap();
        assert!((m.shell_mass(&s).unwrap() - 2.0).abs() < 1e-6);
    }
}
