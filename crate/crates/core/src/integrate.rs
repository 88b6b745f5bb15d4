//! Integrals against N, N̂ and dt, and càdlàg paths
//!
//! ```text
//! Y(t) = ∫₀ᵗ G ds + ∫∫∫_{|z|>split} K dN + ∫∫∫_{|z|≤split} H dN̂
//! ```
//!
//! Everything is evaluated on a finite-activity window, so jump integrals are
//! finite sums and compensators are products of one-dimensional integrals.

use thiserror::Error;

use crate::integrand::{DetIntegrand, IntegrandError};
use crate::measure::{LevyMeasure, MeasureError, Shell};
use crate::prm::{PointConfiguration, SpaceBox, Window};
use crate::quad::{self, QuadConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IntegrateError {
    #[error(transparent)]
    Integrand(#[from] IntegrandError),
    #[error("infinite compensator: {0}")]
    InfiniteCompensator(MeasureError),
    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("set is not contained in the window")]
    NotContained,
    #[error("integrand must not depend on the jump size")]
    DependsOnJump,
}

pub type Result<T, E = IntegrateError> = std::result::Result<T, E>;

fn lift(e: IntegrandError) -> IntegrateError {
    match e {
        IntegrandError::Measure(
            m @ (MeasureError::InfiniteMass { .. } | MeasureError::InfiniteMoment { .. }),
        ) => IntegrateError::InfiniteCompensator(m),
        other => IntegrateError::Integrand(other),
    }
}

fn check_time<T: Real>(t: T, horizon: T) -> Result<()> {
    if t < T::zero() || t > horizon {
        return Err(IntegrateError::TimeOutOfRange {
            t: t.as_f64(),
            horizon: horizon.as_f64(),
        });
    }
    Ok(())
}

/// `∫₀ᵗ G(s) ds` for a time-only `G`.
pub fn int_time<T: Real>(g: &DetIntegrand<T>, t: T, cfg: &QuadConfig) -> Result<T> {
    g.integrate_time(T::zero(), t, cfg).map_err(lift)
}

/// `Σ_{tᵢ ≤ t} K(tᵢ, xᵢ, zᵢ)`.
pub fn int_n<T: Real>(k: &DetIntegrand<T>, c: &PointConfiguration<T>, t: T) -> T {
    c.points()
        .iter()
        .take_while(|p| p.t <= t)
        .map(|p| k.eval(p.t, p.x(), p.z))
        .sum()
}

/// `∫₀ᵗ ∫_B ∫_Γ H ν(dz) dx ds` over the window's box and shell.
pub fn compensator<T: Real>(
    h: &DetIntegrand<T>,
    w: &Window<T>,
    m: &LevyMeasure<T>,
    t: T,
    cfg: &QuadConfig,
) -> Result<T> {
    check_time(t, w.horizon)?;
    compensator_on(h, &w.space, &w.shell, m, T::zero(), t, cfg)
}

/// `∫_{t0}^{t1} ∫_B ∫_Γ H ν(dz) dx ds` on an explicit set.
pub fn compensator_on<T: Real>(
    h: &DetIntegrand<T>,
    space: &SpaceBox<T>,
    shell: &Shell<T>,
    m: &LevyMeasure<T>,
    t0: T,
    t1: T,
    cfg: &QuadConfig,
) -> Result<T> {
    if h.is_zero() {
        return Ok(T::zero());
    }
    let d = h.compensator_density(space, m, shell, cfg).map_err(lift)?;
    d.integrate_time(t0, t1, cfg).map_err(lift)
}

/// `∫₀ᵗ∫∫ H dN̂ = int_n − compensator`.
pub fn int_nhat<T: Real>(
    h: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    t: T,
    cfg: &QuadConfig,
) -> Result<T> {
    if h.is_zero() {
        return Ok(T::zero());
    }
    let comp = compensator(h, c.window(), m, t, cfg)?;
    Ok(int_n(h, c, t) - comp)
}

/// `Z(A) = a|A| + ∫_{A×{|z|>split}} z dN + ∫_{A×{|z|≤split}} z dN̂` for the
/// space-time set `A = (t0, t1] × B`, with jumps restricted to the window's
/// shell.
#[allow(clippy::too_many_arguments)]
pub fn z_of_set<T: Real>(
    a: T,
    space: &SpaceBox<T>,
    t0: T,
    t1: T,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    split: T,
    cfg: &QuadConfig,
) -> Result<T> {
    let w = c.window();
    if !(t0 >= T::zero() && t0 <= t1 && t1 <= w.horizon) || !w.space.contains_box(space) {
        return Err(IntegrateError::NotContained);
    }
    let mut jumps = T::zero();
    for p in c.points() {
        if p.t > t0 && p.t <= t1 && space.contains(p.x()) {
            jumps += p.z;
        }
    }
    let vol = (t1 - t0) * space.volume();
    let (small, _) = w.shell.split_at(split);
    let comp = match small {
        Some(s) => {
            let _ = cfg;
            vol * m
                .shell_moment(&s, T::one(), true)
                .map_err(IntegrateError::InfiniteCompensator)?
        }
        None => T::zero(),
    };
    Ok(a * vol + jumps - comp)
}

/// `∫₀ᵗ∫ X(s,x) L(ds,dx) = ∫₀ᵗ∫∫ X(s,x)·z dN̂`.
pub fn l_integral<T: Real>(
    x: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    t: T,
    cfg: &QuadConfig,
) -> Result<T> {
    if x.depends_on_jump() {
        return Err(IntegrateError::DependsOnJump);
    }
    int_nhat(&x.mul(&DetIntegrand::z()), c, m, t, cfg)
}

/// Piecewise representation of a càdlàg path: a smooth drift plus jumps.
#[derive(Debug, Clone)]
pub struct CadlagPath<T> {
    drift_rate: DetIntegrand<T>,
    times: Vec<T>,
    jumps: Vec<T>,
    /// `prefix[i] = Σ_{j<i} jumps[j]`
    prefix: Vec<T>,
    horizon: T,
    cfg: QuadConfig,
}

impl<T: Real> CadlagPath<T> {
    /// Builds a path from a time-only drift rate and sorted jumps.
    pub fn new(
        drift_rate: DetIntegrand<T>,
        jumps: Vec<(T, T)>,
        horizon: T,
        cfg: QuadConfig,
    ) -> Result<Self> {
        if !drift_rate.is_time_only() {
            return Err(IntegrandError::NotTimeOnly.into());
        }
        drift_rate
            .integrate_time(T::zero(), horizon, &cfg)
            .map_err(lift)?;
        let (times, jumps): (Vec<T>, Vec<T>) = jumps.into_iter().unzip();
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        let mut prefix = Vec::with_capacity(jumps.len() + 1);
        let mut acc = T::zero();
        prefix.push(acc);
        for j in &jumps {
            acc += *j;
            prefix.push(acc);
        }
        Ok(Self {
            drift_rate,
            times,
            jumps,
            prefix,
            horizon,
            cfg,
        })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// `s ↦ G(s) − (compensator density)(s)`.
    pub fn drift_rate(&self) -> &DetIntegrand<T> {
        &self.drift_rate
    }

    pub fn jump_times(&self) -> &[T] {
        &self.times
    }

    pub fn jumps(&self) -> &[T] {
        &self.jumps
    }

    /// `∫₀ᵗ drift_rate`.
    #[inline]
    pub fn drift(&self, t: T) -> T {
        self.drift_rate
            .integrate_time(T::zero(), t, &self.cfg)
            .unwrap_or_else(|_| T::nan())
    }

    /// Sum of jumps at times `≤ t`.
    #[inline]
    pub fn jump_sum(&self, t: T) -> T {
        self.prefix[self.times.partition_point(|&s| s <= t)]
    }

    /// Sum of jumps at times `< t`.
    #[inline]
    pub fn jump_sum_left(&self, t: T) -> T {
        self.prefix[self.times.partition_point(|&s| s < t)]
    }

    #[inline]
    pub fn eval(&self, t: T) -> T {
        self.drift(t) + self.jump_sum(t)
    }

    /// `Y(t−)`.
    #[inline]
    pub fn eval_left(&self, t: T) -> T {
        self.drift(t) + self.jump_sum_left(t)
    }

    /// Left limit at the `i`-th jump, `Y(tᵢ−)`.
    #[inline]
    pub fn left_at_jump(&self, i: usize) -> T {
        self.drift(self.times[i]) + self.prefix[i]
    }

    /// Time breakpoints of the drift rate inside `(0, t)`, merged with the
    /// jump times, as a sorted segment grid from 0 to `t`.
    pub fn segments(&self, t: T, extra_breaks: &[T]) -> Vec<T> {
        let mut cuts = vec![T::zero(), t];
        cuts.extend(self.times.iter().copied().filter(|&s| s > T::zero() && s < t));
        cuts.extend(
            self.drift_rate
                .time_breaks()
                .into_iter()
                .chain(extra_breaks.iter().copied())
                .filter(|&s| s > T::zero() && s < t),
        );
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite time"));
        cuts.dedup();
        cuts
    }

    /// `sup_{s ≤ t} |Y(s)|` given the critical points of the drift.
    ///
    /// Between jumps the path is the drift plus a constant, so its extrema
    /// lie at segment ends, at left limits before jumps or where the drift
    /// rate vanishes.
    pub fn sup_abs(&self, t: T, critical: &[T]) -> T {
        let mut best = self.eval(T::zero()).abs().max(self.eval(t).abs());
        let upto = self.times.partition_point(|&s| s <= t);
        for i in 0..upto {
            let d = self.drift(self.times[i]);
            best = best
                .max((d + self.prefix[i]).abs())
                .max((d + self.prefix[i + 1]).abs());
        }
        for &s in critical.iter().filter(|&&s| s > T::zero() && s < t) {
            best = best.max(self.eval(s).abs());
        }
        best
    }
}

/// Points in `(0, horizon)` where a time-only rate changes sign: a scan over
/// `grid` cells refined by bisection, plus the rate's own breakpoints.
pub fn drift_critical_points<T: Real>(rate: &DetIntegrand<T>, horizon: T, grid: usize) -> Vec<T> {
    let mut out: Vec<T> = rate
        .time_breaks()
        .into_iter()
        .filter(|&s| s > T::zero() && s < horizon)
        .collect();
    if rate.is_zero() {
        return out;
    }
    let n = grid.max(1);
    let h = horizon / T::lit(n as f64);
    let mut prev_s = T::zero();
    let mut prev = rate.eval_time(prev_s);
    for k in 1..=n {
        let s = if k == n { horizon } else { h * T::lit(k as f64) };
        let v = rate.eval_time(s);
        if prev == T::zero() {
            out.push(prev_s);
        } else if (prev < T::zero()) != (v < T::zero()) && v != T::zero() {
            let sign0 = prev < T::zero();
            let (lo, hi) =
                quad::bisect_boundary(|u| (rate.eval_time(u) < T::zero()) == sign0, prev_s, s, T::epsilon());
            out.push(lo);
            out.push(hi);
        }
        prev_s = s;
        prev = v;
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite time"));
    out.dedup();
    out
}

/// Path of `Y = ∫G ds + ∫∫∫_{|z|>split} K dN + ∫∫∫_{|z|≤split} H dN̂`.
///
/// A jump with `|z| == split` counts as small. `split = ∞` puts every jump
/// in the compensated part.
pub fn build_path<T: Real>(
    g: &DetIntegrand<T>,
    k: &DetIntegrand<T>,
    h: &DetIntegrand<T>,
    c: &PointConfiguration<T>,
    m: &LevyMeasure<T>,
    split: T,
    cfg: &QuadConfig,
) -> Result<CadlagPath<T>> {
    let w = c.window();
    if !g.is_time_only() {
        return Err(IntegrandError::NotTimeOnly.into());
    }
    let (small, _) = w.shell.split_at(split);
    let comp = match small {
        Some(s) if !h.is_zero() => h.compensator_density(&w.space, m, &s, cfg).map_err(lift)?,
        _ => DetIntegrand::zero(),
    };
    let rate = g.sub(&comp);
    let jumps = c
        .points()
        .iter()
        .map(|p| {
            let d = if p.z.abs() > split {
                k.eval(p.t, p.x(), p.z)
            } else {
                h.eval(p.t, p.x(), p.z)
            };
            (p.t, d)
        })
        .collect();
    CadlagPath::new(rate, jumps, w.horizon, *cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Prim;
    use crate::prm::{simulate, Point};

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    fn window() -> Window<f64> {
        Window::new(
            2.0,
            SpaceBox::interval(0.0, 1.0).unwrap(),
            Shell::new(0.1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn time_integrals() {
        let c = cfg();
        assert_eq!(int_time(&DetIntegrand::<f64>::zero(), 1.0, &c).unwrap(), 0.0);
        assert_eq!(int_time(&DetIntegrand::constant(3.0), 2.0, &c).unwrap(), 6.0);
        let s = DetIntegrand::<f64>::time(Prim::Poly {
            coeffs: vec![0.0, 1.0],
        });
        assert!((int_time(&s, 2.0, &c).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn counting_and_empty() {
        let w = window();
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let c = simulate(&w, &m, 3).unwrap();
        let one = DetIntegrand::constant(1.0);
        assert_eq!(int_n(&one, &c, 1.0), c.count_until(1.0) as f64);
        let e = PointConfiguration::empty(w.clone(), 0);
        assert_eq!(int_n(&one, &e, 2.0), 0.0);
        let comp = compensator(&one, &w, &m, 1.5, &cfg()).unwrap();
        let want = 1.5 * 2.0 * (1.0 / 0.1 - 1.0);
        assert!((comp - want).abs() < 1e-12 * want);
        assert!((int_nhat(&one, &e, &m, 1.5, &cfg()).unwrap() + want).abs() < 1e-12 * want);
    }

    #[test]
    fn path_consistency() {
        let w = window();
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let g = DetIntegrand::time(Prim::Cos { freq: 1.0, phase: 0.0 });
        let k = DetIntegrand::constant(2.0);
        let h = DetIntegrand::z().mul(&DetIntegrand::space(0, Prim::Exp { rate: -1.0, abs: true }));
        let c = simulate(&w, &m, 11).unwrap();
        let path = build_path(&g, &k, &h, &c, &m, 0.5, &cfg()).unwrap();
        let (small, big) = w.shell.split_at(0.5);
        let kb = k.mul(&DetIntegrand::shell_indicator(&big.unwrap()));
        let hs = h.mul(&DetIntegrand::shell_indicator(&small.unwrap()));
        let want = int_time(&g, 2.0, &cfg()).unwrap() + int_n(&kb, &c, 2.0) + int_nhat(&hs, &c, &m, 2.0, &cfg()).unwrap();
        assert!((path.eval(2.0) - want).abs() < 1e-12);
        for (i, &t) in path.jump_times().iter().enumerate() {
            assert!((path.eval(t) - path.eval_left(t) - path.jumps()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_jump_left_limits() {
        let w = window();
        let pts = vec![
            Point::new(0.5, &[0.2], 0.3),
            Point::new(1.0, &[0.4], -0.6),
            Point::new(1.5, &[0.9], 0.2),
        ];
        let c = PointConfiguration::from_points(w, pts, 0).unwrap();
        let m = LevyMeasure::atoms([(0.3, 1.0), (-0.6, 1.0), (0.2, 1.0)]).unwrap();
        let z = DetIntegrand::<f64>::z();
        let path = build_path(&DetIntegrand::zero(), &z, &DetIntegrand::zero(), &c, &m, 0.0, &cfg()).unwrap();
        let t = path.jump_times().to_vec();
        for i in 1..t.len() {
            assert_eq!(path.eval_left(t[i]), path.eval(t[i - 1]));
        }
        assert!((path.eval(2.0) + 0.1).abs() < 1e-15);
        assert!((path.sup_abs(2.0, &[]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn z_of_set_deterministic_part() {
        let w = window();
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let e = PointConfiguration::empty(w, 0);
        let b = SpaceBox::interval(0.0, 1.0).unwrap();
        let v = z_of_set(1.0, &b, 0.0, 1.0, &e, &m, 1.0, &cfg()).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn critical_points_of_cosine() {
        let rate = DetIntegrand::time(Prim::Cos { freq: 1.0, phase: 0.0 });
        let cp: Vec<f64> = drift_critical_points(&rate, 4.0, 1000);
        assert!(cp.iter().any(|&s| (s - std::f64::consts::FRAC_PI_2).abs() < 1e-12));
    }
}
