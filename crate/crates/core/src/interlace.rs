//! Interlacing ladders: thresholds `εₙ ↓ 0` for small jumps and `aₙ ↑ ∞`
//! for the spatial domain, chosen so the residual second moment stays below
//! `8⁻ⁿ`, plus Monte Carlo diagnostics of the coupled differences
//! `sup_{t≤T} |Yₙ₊₁ − Yₙ|`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrand::{DetIntegrand, IntegrandError};
use crate::integrate::{self, CadlagPath, IntegrateError};
use crate::mc::{self, McError, McEstimate, Verdict};
use crate::measure::{LevyMeasure, MeasureError, Shell};
use crate::prm::{self, PointConfiguration, PrmError, SpaceBox, Window};
use crate::quad::{self, QuadConfig};
use crate::scalar::Real;

/// Geometric base of the threshold sequence.
const BASE: f64 = 8.0;
/// Grid size for locating sign changes of a drift rate.
const DRIFT_GRID: usize = 10_000;

#[derive(Debug, Error)]
pub enum InterlaceError {
    #[error(transparent)]
    Integrand(#[from] IntegrandError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("ladder needs at least two levels for a diagnostic")]
    TooFewLevels,
    #[error("ladder kind does not match the problem")]
    KindMismatch,
}

pub type Result<T, E = InterlaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderKind {
    /// Shells `{εₙ < |z| ≤ 1}` on a fixed box.
    SmallJump,
    /// Boxes `[−aₙ, aₙ]ᵈ` with small jumps compensated and big jumps raw.
    SpatialI,
    /// Boxes `[−aₙ, aₙ]ᵈ` with all jumps compensated.
    SpatialII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderFlag {
    None,
    /// `I(ε) = 0` below some `ε₀ > 0`: the ladder stops at `ε₀`.
    FiniteActivity,
    /// Bounded spatial support: the ladder stops at the support radius.
    CompactSupport,
    /// `I(a)` does not tend to zero; no levels are produced.
    AssumptionViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Level<T> {
    pub n: usize,
    pub threshold: T,
    pub i_value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Ladder<T> {
    pub kind: LadderKind,
    pub levels: Vec<Level<T>>,
    pub flag: LadderFlag,
    /// `ε₀` or `a*` when the ladder is truncated.
    pub limit: Option<T>,
}

impl<T: Real> Ladder<T> {
    /// A ladder with user-chosen thresholds; `I` values are filled in by the
    /// caller or left as zero.
    pub fn custom(kind: LadderKind, thresholds: &[T]) -> Self {
        Self {
            kind,
            levels: thresholds
                .iter()
                .enumerate()
                .map(|(i, &t)| Level {
                    n: i + 1,
                    threshold: t,
                    i_value: T::zero(),
                })
                .collect(),
            flag: LadderFlag::None,
            limit: None,
        }
    }

    pub fn thresholds(&self) -> Vec<T> {
        self.levels.iter().map(|l| l.threshold).collect()
    }
}

fn target<T: Real>(n: usize) -> T {
    T::lit(BASE.powi(-(n as i32)))
}

/// `I(ε) = ∫₀ᵀ ∫_B ∫_{|z|≤ε} |H|² ν(dz) dx ds`.
pub fn i_small<T: Real>(
    h: &DetIntegrand<T>,
    space: &SpaceBox<T>,
    horizon: T,
    m: &LevyMeasure<T>,
    eps: T,
) -> Result<T> {
    if eps <= T::zero() {
        return Ok(T::zero());
    }
    let cfg = *m.quad();
    let sq = h.square();
    let shell = Shell::new(T::zero(), eps)?;
    Ok(integrate::compensator_on(&sq, space, &shell, m, T::zero(), horizon, &cfg)?)
}

/// Spatial residual `I(a)` outside `[−a, a]ᵈ`.
///
/// `SpatialI`: `∫∫_{K_a^c}∫_{|z|≤1} |H|² + ∫∫_{K_a^c}∫_{|z|>1} |K|`;
/// `SpatialII`: `∫∫_{K_a^c}∫_{ℝ₀} |H|²`.
#[allow(clippy::too_many_arguments)]
pub fn i_spatial<T: Real>(
    kind: LadderKind,
    h: &DetIntegrand<T>,
    k: &DetIntegrand<T>,
    horizon: T,
    dim: usize,
    m: &LevyMeasure<T>,
    a: T,
) -> Result<T> {
    let cfg = *m.quad();
    let split = T::one();
    let (h_shell, k_shell) = match kind {
        LadderKind::SpatialI => (
            Shell::new(T::zero(), split)?,
            Some(Shell::new(split, T::infinity())?),
        ),
        LadderKind::SpatialII => (Shell::full(), None),
        LadderKind::SmallJump => return Err(InterlaceError::KindMismatch),
    };
    let mut total = T::zero();
    for t in h.square().terms() {
        let j = t.jump_integral(m, &h_shell, None)?;
        if j == T::zero() {
            continue;
        }
        let time = t.time_integral(T::zero(), horizon, &cfg)?;
        let space = t.space_integral_outside_cube(a, dim, None, &cfg)?;
        total += t.coef * time * space * j;
    }
    if let Some(ks) = k_shell {
        if !k.is_zero() {
            if k.terms().len() > 1 {
                return Err(IntegrandError::NotFactorizable {
                    terms: k.terms().len(),
                }
                .into());
            }
            let t = &k.terms()[0];
            let j = t.jump_integral(m, &ks, Some(T::one()))?;
            if j > T::zero() {
                let time = t.time_abs_pow_integral(T::zero(), horizon, T::one(), &cfg)?;
                let space = t.space_integral_outside_cube(a, dim, Some(T::one()), &cfg)?;
                total += t.coef.abs() * time * space * j;
            }
        }
    }
    Ok(total)
}

/// `εₙ = sup{ε ∈ (0, 1] : I(ε) ≤ 8⁻ⁿ}` for `n = 1..=n_max`.
pub fn eps_sequence<T: Real>(
    h: &DetIntegrand<T>,
    space: &SpaceBox<T>,
    horizon: T,
    m: &LevyMeasure<T>,
    n_max: usize,
) -> Result<Ladder<T>> {
    let rel = T::lit(m.quad().root_rel_tol);
    let cap = T::one();
    let i = |e: T| i_small(h, space, horizon, m, e);
    let tiny = T::lit(1e-12);
    let mut limit = None;
    if i(tiny)? == T::zero() {
        let eps0 = if i(cap)? == T::zero() {
            cap
        } else {
            let mut err = None;
            let (lo, _) = quad::bisect_boundary(
                |e| match i(e) {
                    Ok(v) => v == T::zero(),
                    Err(x) => {
                        err.get_or_insert(x);
                        false
                    }
                },
                tiny,
                cap,
                rel,
            );
            if let Some(e) = err {
                return Err(e);
            }
            lo
        };
        limit = Some(eps0);
    }
    let mut levels: Vec<Level<T>> = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let goal = target::<T>(n);
        let eps = if i(cap)? <= goal {
            cap
        } else {
            let mut lo = levels.last().map_or(cap, |l| l.threshold);
            let mut guard = 0;
            while i(lo)? > goal {
                lo /= T::lit(BASE);
                guard += 1;
                if guard > 400 {
                    return Err(InterlaceError::Measure(MeasureError::InvalidParameter(
                        "small-jump residual does not vanish at zero".into(),
                    )));
                }
            }
            let mut err = None;
            let (l, _) = quad::bisect_boundary(
                |e| match i(e) {
                    Ok(v) => v <= goal,
                    Err(x) => {
                        err.get_or_insert(x);
                        false
                    }
                },
                lo,
                cap,
                rel,
            );
            if let Some(e) = err {
                return Err(e);
            }
            l
        };
        let eps = levels.last().map_or(eps, |p| eps.min(p.threshold));
        let truncated = limit.is_some_and(|e0| eps <= e0 * (T::one() + T::lit(1e-9)));
        let eps = match (truncated, limit) {
            (true, Some(e0)) => e0,
            _ => eps,
        };
        levels.push(Level {
            n,
            threshold: eps,
            i_value: i(eps)?,
        });
        if truncated {
            break;
        }
    }
    Ok(Ladder {
        kind: LadderKind::SmallJump,
        levels,
        flag: if limit.is_some() {
            LadderFlag::FiniteActivity
        } else {
            LadderFlag::None
        },
        limit,
    })
}

/// `aₙ = inf{a > 0 : I(a) ≤ 8⁻ⁿ}` for `n = 1..=n_max`.
#[allow(clippy::too_many_arguments)]
pub fn a_sequence<T: Real>(
    kind: LadderKind,
    h: &DetIntegrand<T>,
    k: &DetIntegrand<T>,
    horizon: T,
    dim: usize,
    m: &LevyMeasure<T>,
    n_max: usize,
) -> Result<Ladder<T>> {
    let rel = T::lit(m.quad().root_rel_tol);
    let i = |a: T| i_spatial(kind, h, k, horizon, dim, m, a);
    let violated = Ladder {
        kind,
        levels: Vec::new(),
        flag: LadderFlag::AssumptionViolated,
        limit: None,
    };
    match i(T::zero()) {
        Err(InterlaceError::Integrand(IntegrandError::NonDecaying { .. })) => return Ok(violated),
        Err(e) => return Err(e),
        Ok(_) => {}
    }
    let radius = h
        .square()
        .space_support_radius(dim)
        .max(if k.is_zero() { T::zero() } else { k.space_support_radius(dim) });
    let limit = radius.is_finite().then_some(radius);
    let mut levels: Vec<Level<T>> = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let goal = target::<T>(n);
        let a = if i(T::zero())? <= goal {
            T::zero()
        } else {
            let mut hi = levels.last().map_or(T::one(), |l| l.threshold.max(T::one()));
            let mut guard = 0;
            while i(hi)? > goal {
                hi *= T::lit(2.0);
                guard += 1;
                if guard > 200 {
                    return Ok(violated);
                }
            }
            let mut err = None;
            let (_, h_) = quad::bisect_boundary(
                |a| match i(a) {
                    Ok(v) => v > goal,
                    Err(x) => {
                        err.get_or_insert(x);
                        false
                    }
                },
                T::zero(),
                hi,
                rel,
            );
            if let Some(e) = err {
                return Err(e);
            }
            h_
        };
        let a = levels.last().map_or(a, |p| a.max(p.threshold));
        let truncated = limit.is_some_and(|r| a >= r * (T::one() - T::lit(1e-9)));
        let a = match (truncated, limit) {
            (true, Some(r)) => r,
            _ => a,
        };
        levels.push(Level {
            n,
            threshold: a,
            i_value: i(a)?,
        });
        if truncated {
            break;
        }
    }
    Ok(Ladder {
        kind,
        levels,
        flag: if limit.is_some() {
            LadderFlag::CompactSupport
        } else {
            LadderFlag::None
        },
        limit,
    })
}

/// The process approximated by a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlaceProblem {
    pub measure: LevyMeasure<f64>,
    pub h: DetIntegrand<f64>,
    #[serde(default)]
    pub k: DetIntegrand<f64>,
    pub horizon: f64,
    /// Box for the small-jump ladder.
    #[serde(rename = "box")]
    pub space: Option<SpaceBox<f64>>,
    /// Spatial dimension for the spatial ladders.
    #[serde(default = "one")]
    pub dim: usize,
    /// Truncation shell used when simulating the spatial ladders.
    pub sim_shell: Option<Shell<f64>>,
}

fn one() -> usize {
    1
}

impl InterlaceProblem {
    pub fn ladder(&self, kind: LadderKind, n_max: usize) -> Result<Ladder<f64>> {
        match kind {
            LadderKind::SmallJump => {
                let space = self.space.as_ref().ok_or(InterlaceError::KindMismatch)?;
                eps_sequence(&self.h, space, self.horizon, &self.measure, n_max)
            }
            _ => a_sequence(kind, &self.h, &self.k, self.horizon, self.dim, &self.measure, n_max),
        }
    }
}

/// Per-level statistics of `Yₙ₊₁ − Yₙ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostic {
    pub n: usize,
    pub threshold: f64,
    pub next_threshold: f64,
    pub i_value: f64,
    /// `E sup |D⁽¹⁾|²` of the compensated part.
    pub sup2: McEstimate,
    /// Doob bound `4·8⁻ⁿ`.
    pub bound: f64,
    /// Frequency of `sup |D| > 2⁻ⁿ`.
    pub exceed: McEstimate,
    pub bound_freq: f64,
    /// `E sup |D⁽²⁾|` of the big-jump part (spatial-I only).
    pub sup_big: Option<McEstimate>,
    pub bound_big: Option<f64>,
    pub verdict_sup2: Verdict,
    pub verdict_freq: Verdict,
    pub verdict_big: Option<Verdict>,
}

impl LevelDiagnostic {
    pub fn pass(&self) -> bool {
        self.verdict_sup2.pass && self.verdict_freq.pass && self.verdict_big.is_none_or(|v| v.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlaceReport {
    pub ladder: Ladder<f64>,
    pub levels: Vec<LevelDiagnostic>,
    pub replicates: usize,
    pub master_seed: u64,
    pub pass: bool,
}

impl InterlaceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "level,threshold,I,empirical_sup2,sup2_se,bound,exceed_freq,exceed_se,bound_freq,empirical_sup_big,bound_big,pass\n",
        );
        for l in &self.levels {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}\n",
                l.n,
                l.threshold,
                l.i_value,
                l.sup2.mean,
                l.sup2.se,
                l.bound,
                l.exceed.mean,
                l.exceed.se,
                l.bound_freq,
                l.sup_big.map_or(String::new(), |e| format!("{:.16e}", e.mean)),
                l.bound_big.map_or(String::new(), |b| format!("{b:.16e}")),
                l.pass()
            ));
        }
        out
    }
}

/// Difference path built from `points` with drift `−rate`.
fn diff_path(
    c: &PointConfiguration<f64>,
    keep: impl Fn(&prm::Point<f64>) -> bool,
    jump: impl Fn(&prm::Point<f64>) -> f64,
    rate: &DetIntegrand<f64>,
    cfg: &QuadConfig,
) -> Result<CadlagPath<f64>> {
    let jumps = c
        .points()
        .iter()
        .filter(|p| keep(p))
        .map(|p| (p.t, jump(p)))
        .collect();
    Ok(CadlagPath::new(rate.scale(-1.0), jumps, c.window().horizon, *cfg)?)
}

struct LevelPlan {
    rate: DetIntegrand<f64>,
    critical: Vec<f64>,
    lo: f64,
    hi: f64,
}

/// Monte Carlo diagnostics of a ladder on one coupled configuration per
/// replicate, simulated at the deepest level and restricted upward.
pub fn interlacing_diagnostic(
    ladder: &Ladder<f64>,
    problem: &InterlaceProblem,
    replicates: usize,
    master_seed: u64,
    workers: usize,
    k_sigma: f64,
) -> Result<InterlaceReport> {
    if ladder.levels.len() < 2 {
        return Err(InterlaceError::TooFewLevels);
    }
    if replicates < 2 {
        return Err(McError::TooFewReplicates(replicates).into());
    }
    let m = &problem.measure;
    let cfg = *m.quad();
    let th = ladder.thresholds();
    let last = *th.last().expect("nonempty ladder");
    let split = 1.0;
    let kind = ladder.kind;

    // Window of the deepest level and per-level compensator rates.
    let (window, plans) = match kind {
        LadderKind::SmallJump => {
            let space = problem.space.clone().ok_or(InterlaceError::KindMismatch)?;
            let w = Window::new(problem.horizon, space.clone(), Shell::new(last.min(split), split)?)?;
            let mut plans = Vec::new();
            for pair in th.windows(2) {
                let (lo, hi) = (pair[1], pair[0]);
                let rate = if hi > lo {
                    problem
                        .h
                        .compensator_density(&space, m, &Shell::new(lo, hi)?, &cfg)?
                } else {
                    DetIntegrand::zero()
                };
                let critical = integrate::drift_critical_points(&rate, problem.horizon, DRIFT_GRID);
                plans.push(LevelPlan { rate, critical, lo, hi });
            }
            (w, plans)
        }
        LadderKind::SpatialI | LadderKind::SpatialII => {
            let shell = problem.sim_shell.ok_or(InterlaceError::KindMismatch)?;
            let dim = problem.dim;
            let w = Window::new(problem.horizon, SpaceBox::cube(last.max(1e-300), dim)?, shell)?;
            let h_shell = match kind {
                LadderKind::SpatialI => shell.split_at(split).0,
                _ => Some(shell),
            };
            let mut plans = Vec::new();
            for pair in th.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let rate = match (&h_shell, hi > lo) {
                    (Some(s), true) => {
                        let outer = problem.h.compensator_density(&SpaceBox::cube(hi, dim)?, m, s, &cfg)?;
                        let inner = if lo > 0.0 {
                            problem.h.compensator_density(&SpaceBox::cube(lo, dim)?, m, s, &cfg)?
                        } else {
                            DetIntegrand::zero()
                        };
                        outer.sub(&inner)
                    }
                    _ => DetIntegrand::zero(),
                };
                let critical = integrate::drift_critical_points(&rate, problem.horizon, DRIFT_GRID);
                plans.push(LevelPlan { rate, critical, lo, hi });
            }
            (w, plans)
        }
    };

    let horizon = problem.horizon;
    let per_rep = mc::run_replicates(replicates, master_seed, workers, |k, rng| -> Result<Vec<[f64; 3]>> {
        let c = prm::simulate_with_rng(&window, m, rng, mc::derive_seed(master_seed, k as u64))?;
        let mut out = Vec::with_capacity(plans.len());
        for (idx, plan) in plans.iter().enumerate() {
            let level = (idx + 1) as f64;
            let limit = 2f64.powf(-level);
            if plan.hi <= plan.lo {
                out.push([0.0, 0.0, 0.0]);
                continue;
            }
            let row = match kind {
                LadderKind::SmallJump => {
                    let sub = prm::restrict(&c, &window.with_shell(Shell::new(plan.lo, plan.hi)?))?;
                    let p = diff_path(&sub, |_| true, |p| problem.h.eval(p.t, p.x(), p.z), &plan.rate, &cfg)?;
                    let s = p.sup_abs(horizon, &plan.critical);
                    [s * s, 0.0, f64::from(u8::from(s > limit))]
                }
                _ => {
                    let dim = problem.dim;
                    let outer = prm::restrict(&c, &window.with_space(SpaceBox::cube(plan.hi, dim)?))?;
                    let inner = SpaceBox::cube(plan.lo.max(0.0), dim)?;
                    let frame = |p: &prm::Point<f64>| plan.lo <= 0.0 || !inner.contains(p.x());
                    let small = |p: &prm::Point<f64>| kind == LadderKind::SpatialII || p.z.abs() <= split;
                    let p1 = diff_path(
                        &outer,
                        |p| frame(p) && small(p),
                        |p| problem.h.eval(p.t, p.x(), p.z),
                        &plan.rate,
                        &cfg,
                    )?;
                    let p2 = diff_path(
                        &outer,
                        |p| frame(p) && !small(p),
                        |p| problem.k.eval(p.t, p.x(), p.z),
                        &DetIntegrand::zero(),
                        &cfg,
                    )?;
                    let s1 = p1.sup_abs(horizon, &plan.critical);
                    let s2 = p2.sup_abs(horizon, &[]);
                    let both = CadlagPath::new(
                        p1.drift_rate().clone(),
                        merge_jumps(&p1, &p2),
                        horizon,
                        cfg,
                    )?;
                    let s = both.sup_abs(horizon, &plan.critical);
                    [s1 * s1, s2, f64::from(u8::from(s > limit))]
                }
            };
            out.push(row);
        }
        Ok(out)
    })?;

    let mut levels = Vec::with_capacity(plans.len());
    let mut pass = true;
    for (idx, plan) in plans.iter().enumerate() {
        let n = idx + 1;
        let col = |j: usize| per_rep.iter().map(|r| r[idx][j]).collect::<Vec<f64>>();
        let sup2 = McEstimate::from_values(&col(0), master_seed);
        let exceed = McEstimate::from_values(&col(2), master_seed);
        let bound = 4.0 * BASE.powi(-(n as i32));
        let (bound_freq, big) = match kind {
            LadderKind::SpatialI => (
                2f64.powi(4 - n as i32) + 2f64.powi(1 - 2 * n as i32),
                Some((McEstimate::from_values(&col(1), master_seed), BASE.powi(-(n as i32)))),
            ),
            LadderKind::SpatialII => (2f64.powi(4 - n as i32) + 2f64.powi(1 - 2 * n as i32), None),
            LadderKind::SmallJump => (2f64.powi(2 - n as i32), None),
        };
        let verdict_sup2 = mc::verdict_upper(&sup2, bound, k_sigma);
        let b = bound_freq.min(1.0);
        let binom = McEstimate {
            se: (b * (1.0 - b) / replicates as f64).sqrt(),
            ..exceed
        };
        let verdict_freq = mc::verdict_upper(&binom, bound_freq, k_sigma);
        let verdict_big = big.map(|(e, bnd)| mc::verdict_upper(&e, bnd, k_sigma));
        let d = LevelDiagnostic {
            n,
            threshold: if kind == LadderKind::SmallJump { plan.hi } else { plan.lo },
            next_threshold: if kind == LadderKind::SmallJump { plan.lo } else { plan.hi },
            i_value: ladder.levels[idx].i_value,
            sup2,
            bound,
            exceed,
            bound_freq,
            sup_big: big.map(|b| b.0),
            bound_big: big.map(|b| b.1),
            verdict_sup2,
            verdict_freq,
            verdict_big,
        };
        pass &= d.pass();
        levels.push(d);
    }
    Ok(InterlaceReport {
        ladder: ladder.clone(),
        levels,
        replicates,
        master_seed,
        pass,
    })
}

fn merge_jumps(a: &CadlagPath<f64>, b: &CadlagPath<f64>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = a
        .jump_times()
        .iter()
        .copied()
        .zip(a.jumps().iter().copied())
        .chain(b.jump_times().iter().copied().zip(b.jumps().iter().copied()))
        .collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Prim;

    fn unit_box() -> SpaceBox<f64> {
        SpaceBox::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn worked_example_closed_form() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let l = eps_sequence(&DetIntegrand::z(), &unit_box(), 1.0, &m, 6).unwrap();
        assert_eq!(l.flag, LadderFlag::None);
        assert_eq!(l.levels.len(), 6);
        for lv in &l.levels {
            let want = 8f64.powi(-(lv.n as i32)) / 2.0;
            assert!((lv.threshold - want).abs() <= 1e-9 * want, "{lv:?}");
            assert!(lv.i_value <= 8f64.powi(-(lv.n as i32)));
        }
    }

    #[test]
    fn finite_activity_truncates() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let h = DetIntegrand::z().mul(&DetIntegrand::jump(Prim::Indicator {
            lo: 0.1,
            hi: 10.0,
            abs: true,
        }));
        let l = eps_sequence(&h, &unit_box(), 1.0, &m, 14).unwrap();
        assert_eq!(l.flag, LadderFlag::FiniteActivity);
        let e0 = l.limit.unwrap();
        assert!((e0 - 0.1).abs() < 1e-9);
        assert!((l.levels.last().unwrap().threshold - 0.1).abs() < 1e-9);
        assert!(l.levels.windows(2).all(|w| w[1].threshold <= w[0].threshold));
    }

    #[test]
    fn spatial_closed_form_tail() {
        // H = e^{-|x|} z, d = 1, truncated stable α=1 c=1 R=1, T=1:
        // I(a) = ∫_{|x|>a} e^{-2|x|} dx · ∫_{|z|≤1} z² ν(dz) = e^{-2a}·2
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let h = DetIntegrand::space(0, Prim::Exp { rate: -1.0, abs: true }).mul(&DetIntegrand::z());
        let l = a_sequence(LadderKind::SpatialI, &h, &DetIntegrand::zero(), 1.0, 1, &m, 5).unwrap();
        for lv in &l.levels {
            let want = (2.0 * 8f64.powi(lv.n as i32)).ln() / 2.0;
            assert!((lv.threshold - want).abs() < 1e-8, "{lv:?} vs {want}");
        }
        assert!(l.levels.windows(2).all(|w| w[1].threshold >= w[0].threshold));
    }

    #[test]
    fn compact_support_truncates() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let h = DetIntegrand::box_indicator(&SpaceBox::interval(-2.0, 2.0).unwrap()).mul(&DetIntegrand::z());
        let l = a_sequence(LadderKind::SpatialII, &h, &DetIntegrand::zero(), 1.0, 1, &m, 8).unwrap();
        assert_eq!(l.flag, LadderFlag::CompactSupport);
        assert_eq!(l.limit, Some(2.0));
        assert!(l.levels.iter().all(|lv| lv.threshold <= 2.0));
    }

    #[test]
    fn non_decaying_is_flagged() {
        let m = LevyMeasure::truncated_stable(1.0, 1.0, 1.0).unwrap();
        let l = a_sequence(LadderKind::SpatialII, &DetIntegrand::z(), &DetIntegrand::zero(), 1.0, 1, &m, 3).unwrap();
        assert_eq!(l.flag, LadderFlag::AssumptionViolated);
        assert!(l.levels.is_empty());
    }

    #[test]
    fn levels_below_smallest_atom_are_silent() {
        let m = LevyMeasure::atoms([(0.5, 1.0), (-0.75, 0.5), (0.9, 0.25)]).unwrap();
        let problem = InterlaceProblem {
            measure: m,
            h: DetIntegrand::z(),
            k: DetIntegrand::zero(),
            horizon: 1.0,
            space: Some(unit_box()),
            dim: 1,
            sim_shell: None,
        };
        let ladder = Ladder::custom(LadderKind::SmallJump, &[1.0, 0.8, 0.4, 0.2, 0.1]);
        let r = interlacing_diagnostic(&ladder, &problem, 50, 1, 1, 4.0).unwrap();
        for l in &r.levels {
            if l.threshold <= 0.4 {
                assert_eq!(l.sup2.mean, 0.0);
                assert_eq!(l.exceed.mean, 0.0);
            }
        }
        assert!(r.levels[0].sup2.mean > 0.0);
    }
}
