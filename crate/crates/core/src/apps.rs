//! Applications of the calculus: Kunita moment reports, the exponential
//! martingale and its jump representation, and multiple integrals against
//! the compensated measure with their chaos isometries.
//!
//! Everything runs at a fixed shell, so the model is compound Poisson and
//! every identity is checked at that truncation level.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrand::{DetIntegrand, IntegrandError};
use crate::integrate::{self, CadlagPath, IntegrateError};
use crate::mc::{self, ComplexEstimate, McError, McEstimate, Verdict};
use crate::measure::{LevyMeasure, MeasureError};
use crate::prm::{self, PointConfiguration, PrmError, SpaceBox, Window};
use crate::quad::{GaussLegendre, NodalBasis, QuadConfig};

/// Grid size for locating sign changes of a drift rate.
const DRIFT_GRID: usize = 10_000;

/// Frozen regression bound on `ratio / max(v^{p/2}, m_p)` over the bundled
/// Kunita sweep.
pub const KUNITA_RATIO_BOUND: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AppsError {
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
    #[error("moment of order {p} is infinite on the shell")]
    InfiniteMoment { p: f64 },
    #[error("exponent p = {0} must be at least 2")]
    InvalidExponent(f64),
    #[error("integrand must depend on (s, x) only")]
    DependsOnJump,
    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("chaos order {0} is not in 1..=3")]
    Order(usize),
    #[error("slots {i} and {j} overlap without being identical")]
    Overlap { i: usize, j: usize },
}

pub type Result<T, E = AppsError> = std::result::Result<T, E>;

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return Err(AppsError::TimeOutOfRange { t, horizon });
    }
    Ok(())
}

/// Sorted cut points `{0, t} ∪ (breaks ∩ (0, t))`.
fn cuts_in(t: f64, breaks: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut cuts = vec![0.0, t];
    cuts.extend(breaks.into_iter().filter(|&b| b > 0.0 && b < t));
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cuts.dedup();
    cuts
}

/// Tensor Gauss–Legendre rule on a box, split at the integrand's breaks.
fn space_rule(h: &DetIntegrand<f64>, space: &SpaceBox<f64>, nodes: usize) -> Vec<([f64; 3], f64)> {
    let mut xs = vec![([0.0; 3], 1.0)];
    if h.space_dim() == 0 {
        xs[0].1 = space.volume();
        return xs;
    }
    let gl = GaussLegendre::cached(nodes.max(1));
    for k in 0..space.dim() {
        let (lo, hi) = (space.lo()[k], space.hi()[k]);
        let mut cuts = vec![lo, hi];
        cuts.extend(h.space_breaks(k).into_iter().filter(|&b| b > lo && b < hi));
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        cuts.dedup();
        let axis: Vec<(f64, f64)> = cuts.windows(2).flat_map(|c| gl.points(c[0], c[1])).collect();
        let mut next = Vec::with_capacity(xs.len() * axis.len());
        for (x, w) in &xs {
            for &(u, wu) in &axis {
                let mut y = *x;
                y[k] = u;
                next.push((y, w * wu));
            }
        }
        xs = next;
    }
    xs
}

// ---------------------------------------------------------------------------
// Kunita

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsometryCheck {
    pub estimate: McEstimate,
    pub target: f64,
    pub verdict: Verdict,
}

/// Moment report for `Y(t) = ∫₀ᵗ∫ X(s,x) L(ds,dx)` at one exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KunitaReport {
    pub p: f64,
    pub t: f64,
    /// Estimate of `E sup_{s≤t} |Y(s)|^p`.
    pub lhs: McEstimate,
    /// `(∫∫|X|²)^{p/2} + ∫∫|X|^p`.
    pub bracket: f64,
    pub l2: f64,
    pub lp: f64,
    pub v: f64,
    pub m_p: f64,
    /// `max(v^{p/2}, m_p)`
    pub scale: f64,
    /// `lhs / bracket`, absent when the bracket vanishes.
    pub ratio: Option<f64>,
    /// `ratio / scale`
    pub normalized: Option<f64>,
    /// `E|Y(t)|² = v ∫∫|X|²`, present for `p = 2`.
    pub isometry: Option<IsometryCheck>,
}

/// `∫₀ᵗ ∫_B |X|^q dx ds` for a single factorized term.
fn abs_pow_space_time(x: &DetIntegrand<f64>, space: &SpaceBox<f64>, t: f64, q: f64, cfg: &QuadConfig) -> Result<f64> {
    match x.terms() {
        [] => Ok(0.0),
        [term] => Ok(term.coef.abs().powf(q)
            * term.time_abs_pow_integral(0.0, t, q, cfg)?
            * term.space_integral(space, Some(q), cfg)?),
        terms => Err(IntegrandError::NotFactorizable { terms: terms.len() }.into()),
    }
}

/// Per-configuration Kunita path: `Y = ∫∫∫ X·z dN̂` on the window shell.
pub struct KunitaPath {
    h: DetIntegrand<f64>,
    rate: DetIntegrand<f64>,
    critical: Vec<f64>,
    cfg: QuadConfig,
}

impl KunitaPath {
    pub fn new(x: &DetIntegrand<f64>, window: &Window<f64>, m: &LevyMeasure<f64>) -> Result<Self> {
        if x.depends_on_jump() {
            return Err(AppsError::DependsOnJump);
        }
        let cfg = *m.quad();
        let h = x.mul(&DetIntegrand::z());
        let rate = if h.is_zero() {
            DetIntegrand::zero()
        } else {
            h.compensator_density(&window.space, m, &window.shell, &cfg)?.scale(-1.0)
        };
        let critical = integrate::drift_critical_points(&rate, window.horizon, DRIFT_GRID);
        Ok(Self { h, rate, critical, cfg })
    }

    pub fn path(&self, c: &PointConfiguration<f64>) -> Result<CadlagPath<f64>> {
        let jumps = c
            .points()
            .iter()
            .map(|p| (p.t, self.h.eval(p.t, p.x(), p.z)))
            .collect();
        Ok(CadlagPath::new(self.rate.clone(), jumps, c.window().horizon, self.cfg)?)
    }

    /// `sup_{s≤t} |Y(s)|`.
    pub fn sup_abs(&self, path: &CadlagPath<f64>, t: f64) -> f64 {
        path.sup_abs(t, &self.critical)
    }
}

/// Kunita reports for every exponent in `ps`, sharing one simulated
/// configuration per replicate.
#[allow(clippy::too_many_arguments)]
pub fn kunita_report(
    x: &DetIntegrand<f64>,
    m: &LevyMeasure<f64>,
    window: &Window<f64>,
    ps: &[f64],
    t: f64,
    replicates: usize,
    master_seed: u64,
    workers: usize,
    k_sigma: f64,
) -> Result<Vec<KunitaReport>> {
    check_time(t, window.horizon)?;
    if replicates < 2 {
        return Err(McError::TooFewReplicates(replicates).into());
    }
    if let Some(&p) = ps.iter().find(|&&p| p < 2.0 || !p.is_finite()) {
        return Err(AppsError::InvalidExponent(p));
    }
    let cfg = *m.quad();
    let shell = &window.shell;
    let moment = |p: f64| {
        m.shell_moment(shell, p, false)
            .map_err(|_| AppsError::InfiniteMoment { p })
            .and_then(|v| if v.is_finite() { Ok(v) } else { Err(AppsError::InfiniteMoment { p }) })
    };
    let v = moment(2.0)?;
    let m_ps = ps.iter().map(|&p| moment(p)).collect::<Result<Vec<_>>>()?;
    let l2 = abs_pow_space_time(x, &window.space, t, 2.0, &cfg)?;
    let lps = ps
        .iter()
        .map(|&p| abs_pow_space_time(x, &window.space, t, p, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let plan = KunitaPath::new(x, window, m)?;
    let samples = mc::run_replicates(replicates, master_seed, workers, |k, rng| {
        let c = prm::simulate_with_rng(window, m, rng, mc::derive_seed(master_seed, k as u64))?;
        let path = plan.path(&c)?;
        Ok::<_, AppsError>((plan.sup_abs(&path, t), path.eval(t)))
    })?;

    let mut out = Vec::with_capacity(ps.len());
    for (i, &p) in ps.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|(s, _)| s.powf(p)).collect();
        let lhs = McEstimate::from_values(&vals, master_seed);
        let bracket = l2.powf(p / 2.0) + lps[i];
        let scale = v.powf(p / 2.0).max(m_ps[i]);
        let ratio = (bracket > 0.0).then(|| lhs.mean / bracket);
        let normalized = ratio.filter(|_| scale > 0.0).map(|r| r / scale);
        let isometry = (p == 2.0).then(|| {
            let sq: Vec<f64> = samples.iter().map(|(_, y)| y * y).collect();
            let estimate = McEstimate::from_values(&sq, master_seed);
            let target = v * l2;
            IsometryCheck {
                estimate,
                target,
                verdict: mc::verdict(&estimate, target, k_sigma),
            }
        });
        out.push(KunitaReport {
            p,
            t,
            lhs,
            bracket,
            l2,
            lp: lps[i],
            v,
            m_p: m_ps[i],
            scale,
            ratio,
            normalized,
            isometry,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exponential martingale

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MartingaleConfig {
    /// Uniform time panels before merging with the integrand's breaks.
    pub time_panels: usize,
    pub time_nodes: usize,
    pub space_nodes: usize,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        Self {
            time_panels: 4,
            time_nodes: 16,
            space_nodes: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    /// `φ` at the panel's Gauss–Legendre nodes.
    phi: Vec<Complex64>,
    /// `Φ(a)`
    start: Complex64,
}

/// `M_h(t) = exp{i L_h(t) − ∫₀ᵗ∫ Ψ_shell(h) dx ds}` for a deterministic
/// `h(s, x)` on a window.
///
/// With `φ(s) = ∫_B ∫_shell (e^{ih(s,x)z} − 1) ν(dz) dx` and `Φ = ∫φ`, the
/// martingale is `exp{iJ(t) − Φ(t)}` where `J` is the raw jump sum
/// `Σ h(tᵢ,xᵢ) zᵢ`. `φ` is tabulated at Gauss–Legendre nodes on panels and
/// `Φ` is the exact integral of its interpolant.
#[derive(Debug, Clone)]
pub struct ExpMartingale {
    h: DetIntegrand<f64>,
    window: Window<f64>,
    measure: LevyMeasure<f64>,
    cfg: MartingaleConfig,
    basis: NodalBasis,
    space: Vec<([f64; 3], f64)>,
    m1: f64,
    panels: Vec<Panel>,
}

impl ExpMartingale {
    pub fn new(
        h: &DetIntegrand<f64>,
        window: &Window<f64>,
        m: &LevyMeasure<f64>,
        cfg: &MartingaleConfig,
    ) -> Result<Self> {
        if h.depends_on_jump() {
            return Err(AppsError::DependsOnJump);
        }
        m.shell_mass(&window.shell)?;
        let m1 = m.shell_moment(&window.shell, 1.0, true)?;
        let basis = NodalBasis::new(cfg.time_nodes.max(2));
        let space = space_rule(h, &window.space, cfg.space_nodes);
        let mut me = Self {
            h: h.clone(),
            window: window.clone(),
            measure: m.clone(),
            cfg: cfg.clone(),
            basis,
            space,
            m1,
            panels: Vec::new(),
        };
        let horizon = window.horizon;
        let n = cfg.time_panels.max(1);
        let uniform = (1..n).map(|k| horizon * k as f64 / n as f64);
        let cuts = cuts_in(horizon, uniform.chain(h.time_breaks()));
        let mut start = Complex64::new(0.0, 0.0);
        for c in cuts.windows(2) {
            let (a, b) = (c[0], c[1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let phi = me
                .basis
                .nodes()
                .iter()
                .map(|&u| me.phi_exact(mid + half * u))
                .collect::<Result<Vec<_>>>()?;
            let total: Complex64 = me.basis.weights().iter().zip(&phi).map(|(w, f)| f * (w * half)).sum();
            me.panels.push(Panel { a, b, phi, start });
            start += total;
        }
        Ok(me)
    }

    pub fn integrand(&self) -> &DetIntegrand<f64> {
        &self.h
    }

    pub fn window(&self) -> &Window<f64> {
        &self.window
    }

    /// `∫_B Ψ_shell(u·h(s,x)) dx` by the tensor rule in `x`.
    fn exponent_density(&self, u: f64, s: f64) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in &self.space {
            let hv = self.h.eval(s, &x[..self.window.dim()], 0.0);
            acc += self.measure.psi_shell(&self.window.shell, u * hv)? * *w;
        }
        Ok(acc)
    }

    /// `φ(s)` from the measure's exponent, without interpolation.
    pub fn phi_exact(&self, s: f64) -> Result<Complex64> {
        let mut acc = self.exponent_density(1.0, s)?;
        for (x, w) in &self.space {
            let hv = self.h.eval(s, &x[..self.window.dim()], 0.0);
            acc += Complex64::new(0.0, hv * self.m1 * w);
        }
        Ok(acc)
    }

    fn panel_at(&self, s: f64) -> &Panel {
        let i = self.panels.partition_point(|p| p.b < s);
        &self.panels[i.min(self.panels.len() - 1)]
    }

    /// Interpolated `φ(s)`.
    pub fn phi(&self, s: f64) -> Complex64 {
        let p = self.panel_at(s);
        let u = (2.0 * s - p.a - p.b) / (p.b - p.a);
        self.basis.interp_row(u).iter().zip(&p.phi).map(|(l, f)| f * l).sum()
    }

    /// `Φ(s) = ∫₀ˢ φ`.
    pub fn big_phi(&self, s: f64) -> Complex64 {
        let p = self.panel_at(s);
        let half = 0.5 * (p.b - p.a);
        let u = (2.0 * s - p.a - p.b) / (p.b - p.a);
        p.start
            + self
                .basis
                .integral_row(u)
                .iter()
                .zip(&p.phi)
                .map(|(l, f)| f * (l * half))
                .sum::<Complex64>()
    }

    /// `∫₀ᵗ ∫_B Ψ_shell(u·h(s,x)) dx ds`, so that `E e^{iuL_h(t)}` is its
    /// exponential.
    pub fn exponent(&self, u: f64, t: f64) -> Result<Complex64> {
        check_time(t, self.window.horizon)?;
        let gl = GaussLegendre::cached(self.cfg.time_nodes.max(2));
        let breaks = self.panels.iter().map(|p| p.b);
        let mut acc = Complex64::new(0.0, 0.0);
        for c in cuts_in(t, breaks).windows(2) {
            for (s, w) in gl.points(c[0], c[1]) {
                acc += self.exponent_density(u, s)? * w;
            }
        }
        Ok(acc)
    }

    /// Raw jump sum `J(t) = Σ_{tᵢ≤t} h(tᵢ,xᵢ) zᵢ`.
    pub fn jump_sum(&self, c: &PointConfiguration<f64>, t: f64) -> f64 {
        c.points()
            .iter()
            .take_while(|p| p.t <= t)
            .map(|p| self.h.eval(p.t, p.x(), 0.0) * p.z)
            .sum()
    }

    /// `L_h(t) = ∫₀ᵗ∫ h L(ds,dx)`.
    pub fn l_h(&self, c: &PointConfiguration<f64>, t: f64) -> Result<f64> {
        Ok(integrate::l_integral(&self.h, c, &self.measure, t, self.measure.quad())?)
    }

    /// `M_h(t)`.
    pub fn eval(&self, c: &PointConfiguration<f64>, t: f64) -> Complex64 {
        (Complex64::i() * self.jump_sum(c, t) - self.big_phi(t)).exp()
    }

    /// `|M_h(t)| = exp{−∫₀ᵗ∫ Re Ψ_shell(h)}`, computed without the interpolant.
    pub fn modulus(&self, t: f64) -> Result<f64> {
        Ok((-self.exponent(1.0, t)?.re).exp())
    }

    /// `|M(t) − [1 + Σ (e^{ihz} − 1) M(tᵢ−) − ∫₀ᵗ φ M ds]|`, with `M(tᵢ−)`
    /// tracked through the jump recursion and the integral done by
    /// Gauss–Legendre on every inter-jump piece.
    pub fn representation_residual(&self, c: &PointConfiguration<f64>, t: f64) -> Result<f64> {
        check_time(t, self.window.horizon)?;
        let gl = GaussLegendre::cached(self.cfg.time_nodes.max(2));
        let i = Complex64::i();
        let panel_breaks: Vec<f64> = self.panels.iter().map(|p| p.b).collect();
        let mut jumps = Complex64::new(0.0, 0.0);
        let mut drift = Complex64::new(0.0, 0.0);
        let mut j = 0.0;
        let mut cur = 0.0;
        let piece = |a: f64, b: f64, j: f64, drift: &mut Complex64| {
            for c in cuts_in(b, panel_breaks.iter().copied()).windows(2) {
                let (lo, hi) = (c[0].max(a), c[1]);
                if hi <= lo {
                    continue;
                }
                for (s, w) in gl.points(lo, hi) {
                    *drift += self.phi(s) * (i * j - self.big_phi(s)).exp() * w;
                }
            }
        };
        for p in c.points().iter().take_while(|p| p.t <= t) {
            piece(cur, p.t, j, &mut drift);
            let left = (i * j - self.big_phi(p.t)).exp();
            let d = self.h.eval(p.t, p.x(), 0.0) * p.z;
            jumps += ((i * d).exp() - 1.0) * left;
            j += d;
            cur = p.t;
        }
        piece(cur, t, j, &mut drift);
        let rhs = Complex64::new(1.0, 0.0) + jumps - drift;
        Ok((self.eval(c, t) - rhs).norm())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharfnPoint {
    pub u: f64,
    pub estimate: ComplexEstimate,
    pub target: Complex64,
    pub error: f64,
    /// `k / √n`
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub t: f64,
    pub mean: ComplexEstimate,
    pub mean_verdict: Verdict,
    /// Largest `| |M(t)| − exp{−∫∫Re Ψ_shell(h)} |` over the replicates.
    pub modulus_error: f64,
    /// Largest representation residual over the first `paths` replicates.
    pub representation_residual: f64,
    pub representation_paths: usize,
    pub charfn: Vec<CharfnPoint>,
}

impl MartingaleReport {
    pub fn pass(&self, modulus_tol: f64, representation_tol: f64) -> bool {
        self.mean_verdict.pass
            && self.modulus_error <= modulus_tol
            && self.representation_residual <= representation_tol
            && self.charfn.iter().all(|c| c.pass)
    }
}

/// Monte Carlo checks of `E M_h(t) = 1`, the modulus identity, the jump
/// representation and the characteristic function of `L_h(t)`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_check(
    em: &ExpMartingale,
    t: f64,
    us: &[f64],
    replicates: usize,
    representation_paths: usize,
    master_seed: u64,
    workers: usize,
    k_sigma: f64,
) -> Result<MartingaleReport> {
    check_time(t, em.window.horizon)?;
    if replicates < 2 {
        return Err(McError::TooFewReplicates(replicates).into());
    }
    let modulus = em.modulus(t)?;
    let w = &em.window;
    let drift = integrate::compensator(&em.h.mul(&DetIntegrand::z()), w, &em.measure, t, em.measure.quad())?;
    let rows = mc::run_replicates(replicates, master_seed, workers, |k, rng| {
        let c = prm::simulate_with_rng(w, &em.measure, rng, mc::derive_seed(master_seed, k as u64))?;
        let mv = em.eval(&c, t);
        let l = em.jump_sum(&c, t) - drift;
        let rep = if k < representation_paths {
            em.representation_residual(&c, t)?
        } else {
            0.0
        };
        Ok::<_, AppsError>((mv, l, rep))
    })?;
    let ms: Vec<Complex64> = rows.iter().map(|r| r.0).collect();
    let mean = ComplexEstimate::from_values(&ms, master_seed);
    let mean_verdict = mc::verdict_complex(&mean, Complex64::new(1.0, 0.0), k_sigma);
    let modulus_error = ms.iter().map(|m| (m.norm() - modulus).abs()).fold(0.0, f64::max);
    let representation_residual = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let ls: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let bound = k_sigma / (replicates as f64).sqrt();
    let charfn = us
        .iter()
        .map(|&u| {
            let estimate = mc::empirical_cf(&ls, u, master_seed);
            let target = em.exponent(u, t)?.exp();
            let error = (estimate.mean() - target).norm();
            Ok(CharfnPoint {
                u,
                estimate,
                target,
                error,
                bound,
                pass: error <= bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MartingaleReport {
        t,
        mean,
        mean_verdict,
        modulus_error,
        representation_residual,
        representation_paths: representation_paths.min(replicates),
        charfn,
    })
}

// ---------------------------------------------------------------------------
// Chaos

fn intervals_disjoint(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> bool {
    match (a, b) {
        (Some((a0, a1)), Some((b0, b1))) => a1 <= b0 || b1 <= a0 || a1 <= a0 || b1 <= b0,
        _ => false,
    }
}

fn slots_disjoint(f: &DetIntegrand<f64>, g: &DetIntegrand<f64>) -> bool {
    intervals_disjoint(f.time_support(), g.time_support())
        || (0..3).any(|k| intervals_disjoint(f.space_support(k), g.space_support(k)))
        || intervals_disjoint(f.jump_abs_support(), g.jump_abs_support())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `sym(g₁ ⊗ … ⊗ gₙ)` with slots that are pairwise disjoint or identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DetIntegrand<f64>>", into = "Vec<DetIntegrand<f64>>")]
pub struct ChaosFunction {
    slots: Vec<DetIntegrand<f64>>,
}

impl TryFrom<Vec<DetIntegrand<f64>>> for ChaosFunction {
    type Error = AppsError;

    fn try_from(slots: Vec<DetIntegrand<f64>>) -> Result<Self> {
        Self::new(slots)
    }
}

impl From<ChaosFunction> for Vec<DetIntegrand<f64>> {
    fn from(f: ChaosFunction) -> Self {
        f.slots
    }
}

impl ChaosFunction {
    pub fn new(slots: Vec<DetIntegrand<f64>>) -> Result<Self> {
        if !(1..=3).contains(&slots.len()) {
            return Err(AppsError::Order(slots.len()));
        }
        for i in 0..slots.len() {
            for j in i + 1..slots.len() {
                if slots[i] != slots[j] && !slots_disjoint(&slots[i], &slots[j]) {
                    return Err(AppsError::Overlap { i, j });
                }
            }
        }
        Ok(Self { slots })
    }

    pub fn order(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[DetIntegrand<f64>] {
        &self.slots
    }

    /// `Gᵢⱼ = ∫ gᵢ gⱼ dμ` over the window.
    pub fn gram(&self, w: &Window<f64>, m: &LevyMeasure<f64>) -> Result<Vec<Vec<f64>>> {
        let cfg = m.quad();
        let n = self.order();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = integrate::compensator(&self.slots[i].mul(&self.slots[j]), w, m, w.horizon, cfg)?;
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        Ok(g)
    }

    /// `n!‖f‖² = perm(G)`, the second moment of `Iₙ(f)`.
    pub fn isometry_target(&self, w: &Window<f64>, m: &LevyMeasure<f64>) -> Result<f64> {
        let g = self.gram(w, m)?;
        Ok(permutations(self.order())
            .iter()
            .map(|s| s.iter().enumerate().map(|(i, &j)| g[i][j]).product::<f64>())
            .sum())
    }

    /// `‖f‖²` of the symmetrized tensor.
    pub fn norm_sq(&self, w: &Window<f64>, m: &LevyMeasure<f64>) -> Result<f64> {
        Ok(self.isometry_target(w, m)? / factorial(self.order()))
    }
}

/// A [`ChaosFunction`] with its compensator densities precomputed for a
/// window, ready for per-configuration evaluation.
#[derive(Debug, Clone)]
pub struct PreparedChaos {
    slots: Vec<DetIntegrand<f64>>,
    gammas: Vec<DetIntegrand<f64>>,
    breaks: Vec<f64>,
    horizon: f64,
    basis: NodalBasis,
    smat: Vec<Vec<f64>>,
}

/// Nodes per inter-jump piece of the iterated integral.
const CHAOS_NODES: usize = 16;

impl PreparedChaos {
    pub fn new(f: &ChaosFunction, w: &Window<f64>, m: &LevyMeasure<f64>) -> Result<Self> {
        let cfg = m.quad();
        let gammas = f
            .slots
            .iter()
            .map(|g| g.compensator_density(&w.space, m, &w.shell, cfg))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let breaks = cuts_in(w.horizon, gammas.iter().flat_map(|g| g.time_breaks()));
        let basis = NodalBasis::new(CHAOS_NODES);
        let smat = basis.integration_matrix();
        Ok(Self {
            slots: f.slots.clone(),
            gammas,
            breaks,
            horizon: w.horizon,
            basis,
            smat,
        })
    }

    /// Ordered iterated integral `∫_{s₁<…<sₙ} g_{σ₁}(p₁)…g_{σₙ}(pₙ) N̂(dp₁)…N̂(dpₙ)`.
    ///
    /// `Uₖ(t) = ∫₀ᵗ Uₖ₋₁(s−) g_{σₖ} dN̂` jumps by `Uₖ₋₁(tᵢ−) g_{σₖ}(pᵢ)` and
    /// between jumps solves `Uₖ' = −γ_{σₖ} Uₖ₋₁`, integrated exactly in the
    /// nodal basis.
    fn ordered(&self, order: &[usize], c: &PointConfiguration<f64>) -> f64 {
        let n = order.len();
        let mut u = vec![0.0; n + 1];
        u[0] = 1.0;
        let q = self.basis.len();
        let mut vals = vec![vec![0.0; q]; n + 1];
        let mut g = vec![0.0; q];
        let mut evolve = |a: f64, b: f64, u: &mut Vec<f64>| {
            let lo = self.breaks.partition_point(|&x| x <= a);
            let hi = self.breaks.partition_point(|&x| x < b);
            let cuts = std::iter::once(a).chain(self.breaks[lo..hi].iter().copied()).chain(std::iter::once(b));
            let cuts: Vec<f64> = cuts.collect();
            for c in cuts.windows(2) {
                let (a, b) = (c[0], c[1]);
                if b <= a {
                    continue;
                }
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                vals[0].iter_mut().for_each(|v| *v = 1.0);
                for k in 1..=n {
                    let gamma = &self.gammas[order[k - 1]];
                    for (l, x) in self.basis.nodes().iter().enumerate() {
                        g[l] = gamma.eval_time(mid + half * x) * vals[k - 1][l];
                    }
                    for (row, v) in self.smat.iter().zip(vals[k].iter_mut()) {
                        *v = u[k] - half * row.iter().zip(&g).map(|(s, y)| s * y).sum::<f64>();
                    }
                    u[k] -= half * self.basis.weights().iter().zip(&g).map(|(w, y)| w * y).sum::<f64>();
                }
            }
        };
        let mut cur = 0.0;
        for p in c.points().iter().take_while(|p| p.t <= self.horizon) {
            evolve(cur, p.t, &mut u);
            for k in (1..=n).rev() {
                u[k] += u[k - 1] * self.slots[order[k - 1]].eval(p.t, p.x(), p.z);
            }
            cur = p.t;
        }
        evolve(cur, self.horizon, &mut u);
        u[n]
    }

    /// `Iₙ(f) = Σ_σ` ordered iterated integrals at the window horizon.
    pub fn eval(&self, c: &PointConfiguration<f64>) -> f64 {
        permutations(self.slots.len())
            .iter()
            .map(|s| self.ordered(s, c))
            .sum()
    }
}

/// `Iₙ(f)` on one configuration, over the configuration's window.
pub fn multiple_integral(f: &ChaosFunction, c: &PointConfiguration<f64>, m: &LevyMeasure<f64>) -> Result<f64> {
    Ok(PreparedChaos::new(f, c.window(), m)?.eval(c))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosRow {
    pub name: String,
    pub estimate: McEstimate,
    pub target: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// Largest `|I₂(g₁⊗g₂) − I₁(g₁)I₁(g₂)|` over replicates for functions
    /// with disjoint slots.
    pub product_error: Option<f64>,
}

impl ChaosReport {
    pub fn pass(&self, product_tol: f64) -> bool {
        self.rows.iter().all(|r| r.verdict.pass) && self.product_error.is_none_or(|e| e <= product_tol)
    }
}

/// Roundoff allowance for a per-path identity that is zero in exact
/// arithmetic, relative to the magnitude of the terms involved.
const EXPANSION_ROUNDOFF: f64 = 1e-12;

/// Monte Carlo checks of `E|Iₙ(f)|² = n!‖f‖²`, `E Iₙ(f) = 0`,
/// `E[Iₙ(f) Iₘ(g)] = 0` for `n ≠ m`, and with `expansion_set = 1_A` the
/// explicit second-chaos expansion of `N̂(A)²`.
#[allow(clippy::too_many_arguments)]
pub fn chaos_checks(
    fs: &[ChaosFunction],
    expansion_set: Option<&DetIntegrand<f64>>,
    m: &LevyMeasure<f64>,
    w: &Window<f64>,
    replicates: usize,
    master_seed: u64,
    workers: usize,
    k_sigma: f64,
) -> Result<ChaosReport> {
    if replicates < 2 {
        return Err(McError::TooFewReplicates(replicates).into());
    }
    let cfg = m.quad();
    let prepared = fs
        .iter()
        .map(|f| PreparedChaos::new(f, w, m))
        .collect::<Result<Vec<_>>>()?;
    let product_slots: Vec<Option<[PreparedChaos; 2]>> = fs
        .iter()
        .map(|f| {
            let s = f.slots();
            if s.len() == 2 && slots_disjoint(&s[0], &s[1]) {
                let one = |g: &DetIntegrand<f64>| PreparedChaos::new(&ChaosFunction::new(vec![g.clone()])?, w, m);
                Ok(Some([one(&s[0])?, one(&s[1])?]))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let expansion = match expansion_set {
        Some(a) => {
            let mu = integrate::compensator(a, w, m, w.horizon, cfg)?;
            let i1 = PreparedChaos::new(&ChaosFunction::new(vec![a.clone()])?, w, m)?;
            let i2 = PreparedChaos::new(&ChaosFunction::new(vec![a.clone(), a.clone()])?, w, m)?;
            Some((a, mu, i1, i2))
        }
        None => None,
    };

    struct Sample {
        values: Vec<f64>,
        product_error: f64,
        residual_sq: f64,
        roundoff_sq: f64,
    }
    let samples = mc::run_replicates(replicates, master_seed, workers, |k, rng| {
        let c = prm::simulate_with_rng(w, m, rng, mc::derive_seed(master_seed, k as u64))?;
        let values: Vec<f64> = prepared.iter().map(|p| p.eval(&c)).collect();
        let mut product_error = 0.0f64;
        for (v, ps) in values.iter().zip(&product_slots) {
            if let Some([a, b]) = ps {
                product_error = product_error.max((v - a.eval(&c) * b.eval(&c)).abs());
            }
        }
        let (residual_sq, roundoff_sq) = match &expansion {
            Some((a, mu, i1, i2)) => {
                let nhat = integrate::int_nhat(a, &c, m, w.horizon, cfg)?;
                let f = nhat * nhat;
                let (v1, v2) = (i1.eval(&c), i2.eval(&c));
                let r = f - mu - v1 - v2;
                let scale = EXPANSION_ROUNDOFF * (f.abs() + mu.abs() + v1.abs() + v2.abs() + 1.0);
                (r * r, scale * scale)
            }
            None => (0.0, 0.0),
        };
        Ok::<_, AppsError>(Sample {
            values,
            product_error,
            residual_sq,
            roundoff_sq,
        })
    })?;

    let mut rows = Vec::new();
    let column = |i: usize| samples.iter().map(|s| s.values[i]).collect::<Vec<f64>>();
    for (i, f) in fs.iter().enumerate() {
        let n = f.order();
        let vals = column(i);
        let mean = McEstimate::from_values(&vals, master_seed);
        rows.push(ChaosRow {
            name: format!("mean_I{n}[{i}]"),
            estimate: mean,
            target: 0.0,
            verdict: mc::verdict(&mean, 0.0, k_sigma),
        });
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let est = McEstimate::from_values(&sq, master_seed);
        let target = f.isometry_target(w, m)?;
        rows.push(ChaosRow {
            name: format!("isometry_I{n}[{i}]"),
            estimate: est,
            target,
            verdict: mc::verdict(&est, target, k_sigma),
        });
    }
    for i in 0..fs.len() {
        for j in i + 1..fs.len() {
            if fs[i].order() == fs[j].order() {
                continue;
            }
            let (a, b) = (column(i), column(j));
            let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            let est = McEstimate::from_values(&prod, master_seed);
            rows.push(ChaosRow {
                name: format!("cross_I{}[{i}]_I{}[{j}]", fs[i].order(), fs[j].order()),
                estimate: est,
                target: 0.0,
                verdict: mc::verdict(&est, 0.0, k_sigma),
            });
        }
    }
    if expansion.is_some() {
        let r: Vec<f64> = samples.iter().map(|s| s.residual_sq).collect();
        let est = McEstimate::from_values(&r, master_seed);
        let floor = samples.iter().map(|s| s.roundoff_sq).sum::<f64>() / replicates as f64;
        rows.push(ChaosRow {
            name: "expansion_residual".into(),
            estimate: est,
            target: 0.0,
            verdict: mc::verdict_upper(&est, floor, k_sigma),
        });
    }
    let product_error = product_slots
        .iter()
        .any(Option::is_some)
        .then(|| samples.iter().map(|s| s.product_error).fold(0.0, f64::max));
    Ok(ChaosReport { rows, product_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::Prim;
    use crate::measure::Shell;
    use crate::prm::Point;

    fn window(t: f64, a: f64, lo: f64, hi: f64) -> Window<f64> {
        Window::new(t, SpaceBox::interval(0.0, a).unwrap(), Shell::new(lo, hi).unwrap()).unwrap()
    }

    fn atoms() -> LevyMeasure<f64> {
        LevyMeasure::atoms([(1.0, 0.7), (-0.5, 1.3)]).unwrap()
    }

    fn config(w: &Window<f64>, pts: &[(f64, f64, f64)]) -> PointConfiguration<f64> {
        let pts = pts.iter().map(|&(t, x, z)| Point::new(t, &[x], z)).collect();
        PointConfiguration::from_points(w.clone(), pts, 0).unwrap()
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn zero_integrand_is_degenerate() {
        let w = window(1.0, 1.0, 0.1, 2.0);
        let r = kunita_report(&DetIntegrand::zero(), &atoms(), &w, &[2.0, 3.0], 1.0, 10, 3, 1, 4.0).unwrap();
        for rep in &r {
            assert_eq!(rep.lhs.mean, 0.0);
            assert_eq!(rep.bracket, 0.0);
            assert!(rep.ratio.is_none());
        }
        assert!(r[0].isometry.as_ref().unwrap().verdict.pass);
    }

    #[test]
    fn kunita_rejects_small_exponent() {
        let w = window(1.0, 1.0, 0.1, 2.0);
        let x = DetIntegrand::constant(1.0);
        assert!(matches!(
            kunita_report(&x, &atoms(), &w, &[1.5], 1.0, 10, 3, 1, 4.0),
            Err(AppsError::InvalidExponent(_))
        ));
    }

    #[test]
    fn kunita_sup_is_monotone_in_t() {
        let w = window(1.0, 1.0, 0.1, 2.0);
        let m = atoms();
        let x = DetIntegrand::time(Prim::Cos { freq: 3.0, phase: 0.0 });
        let plan = KunitaPath::new(&x, &w, &m).unwrap();
        let c = prm::simulate(&w, &m, 11).unwrap();
        let path = plan.path(&c).unwrap();
        let mut last = 0.0;
        for k in 0..=20 {
            let s = plan.sup_abs(&path, k as f64 / 20.0);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn zero_h_martingale_is_one() {
        let w = window(1.0, 1.0, 0.1, 2.0);
        let em = ExpMartingale::new(&DetIntegrand::zero(), &w, &atoms(), &MartingaleConfig::default()).unwrap();
        let c = prm::simulate(&w, &atoms(), 5).unwrap();
        assert_eq!(em.eval(&c, 1.0), Complex64::new(1.0, 0.0));
        assert_eq!(em.representation_residual(&c, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_atom_recursion() {
        // ν = w δ_{z0}, h ≡ c on [0,1]: M(t) = exp{i c z0 N(t) − w(e^{icz0} − 1) t}.
        let (wt, z0, ch) = (1.7, 0.8, 0.6);
        let m = LevyMeasure::atoms([(z0, wt)]).unwrap();
        let w = window(2.0, 1.0, 0.1, 2.0);
        let em = ExpMartingale::new(&DetIntegrand::constant(ch), &w, &m, &MartingaleConfig::default()).unwrap();
        let c = config(&w, &[(0.3, 0.2, z0), (0.9, 0.7, z0), (1.4, 0.1, z0)]);
        let i = Complex64::i();
        let phi = ((i * ch * z0).exp() - 1.0) * wt;
        let mut left = Complex64::new(1.0, 0.0);
        let mut rhs = Complex64::new(1.0, 0.0);
        let mut n = 0.0;
        let mut prev = 0.0;
        for &tj in &[0.3, 0.9, 1.4] {
            // ∫_{prev}^{tj} φ M ds in closed form
            let mk = |s: f64| (i * ch * z0 * n - phi * s).exp();
            rhs -= mk(prev) - mk(tj);
            left = mk(tj);
            rhs += ((i * ch * z0).exp() - 1.0) * left;
            n += 1.0;
            prev = tj;
        }
        let mk = |s: f64| (i * ch * z0 * n - phi * s).exp();
        rhs -= mk(prev) - mk(2.0);
        let exact = mk(2.0);
        assert!((em.eval(&c, 2.0) - exact).norm() < 1e-12);
        assert!((rhs - exact).norm() < 1e-12);
        assert!(left.norm() > 0.0);
        assert!(em.representation_residual(&c, 2.0).unwrap() < 1e-12);
    }

    #[test]
    fn interpolant_matches_exponent() {
        let m = LevyMeasure::truncated_stable(1.2, 0.5, 3.0).unwrap();
        let w = window(1.0, 2.0, 0.2, 3.0);
        let h = DetIntegrand::time(Prim::Cos { freq: 2.0, phase: 0.3 })
            .mul(&DetIntegrand::space(0, Prim::Exp { rate: -0.5, abs: false }));
        let em = ExpMartingale::new(&h, &w, &m, &MartingaleConfig::default()).unwrap();
        for &t in &[0.13, 0.5, 0.77, 1.0] {
            let drift = integrate::compensator(&h.mul(&DetIntegrand::z()), &w, &m, t, m.quad()).unwrap();
            let want = em.exponent(1.0, t).unwrap() + Complex64::new(0.0, drift);
            assert!((em.big_phi(t) - want).norm() < 1e-10);
        }
        let c = prm::simulate(&w, &m, 9).unwrap();
        let mv = em.eval(&c, 1.0);
        assert!((mv.norm() - em.modulus(1.0).unwrap()).abs() < 1e-10);
        let l = em.l_h(&c, 1.0).unwrap();
        let direct = (Complex64::i() * l - em.exponent(1.0, 1.0).unwrap()).exp();
        assert!((mv - direct).norm() < 1e-10);
        assert!(em.representation_residual(&c, 1.0).unwrap() < 1e-10);
    }

    fn boxes() -> (DetIntegrand<f64>, DetIntegrand<f64>) {
        let a = DetIntegrand::time_indicator(0.0, 0.5).mul(&DetIntegrand::space(
            0,
            Prim::Indicator { lo: 0.0, hi: 1.0, abs: false },
        ));
        let b = DetIntegrand::time_indicator(0.5, 1.0).mul(&DetIntegrand::space(
            0,
            Prim::Indicator { lo: 0.0, hi: 1.0, abs: false },
        ));
        (a, b)
    }

    #[test]
    fn overlapping_slots_rejected() {
        let a = DetIntegrand::time_indicator(0.0, 0.6);
        let b = DetIntegrand::time_indicator(0.4, 1.0);
        assert!(matches!(ChaosFunction::new(vec![a.clone(), b]), Err(AppsError::Overlap { .. })));
        assert!(ChaosFunction::new(vec![a.clone(), a]).is_ok());
        assert!(matches!(ChaosFunction::new(vec![]), Err(AppsError::Order(0))));
    }

    #[test]
    fn product_oracle_for_disjoint_boxes() {
        let m = atoms();
        let w = window(1.0, 1.0, 0.1, 2.0);
        let (a, b) = boxes();
        let f = ChaosFunction::new(vec![a.clone(), b.clone()]).unwrap();
        let cfg = *m.quad();
        for seed in 0..20 {
            let c = prm::simulate(&w, &m, seed).unwrap();
            let i2 = multiple_integral(&f, &c, &m).unwrap();
            let na = integrate::int_nhat(&a, &c, &m, 1.0, &cfg).unwrap();
            let nb = integrate::int_nhat(&b, &c, &m, 1.0, &cfg).unwrap();
            assert!((i2 - na * nb).abs() < 1e-12 * (1.0 + (na * nb).abs()));
        }
    }

    #[test]
    fn empty_configuration_collapses() {
        let m = atoms();
        let w = window(1.0, 1.0, 0.1, 2.0);
        let (a, b) = boxes();
        let c = PointConfiguration::empty(w.clone(), 0);
        let cfg = *m.quad();
        let mu_a = integrate::compensator(&a, &w, &m, 1.0, &cfg).unwrap();
        let mu_b = integrate::compensator(&b, &w, &m, 1.0, &cfg).unwrap();
        let i1 = multiple_integral(&ChaosFunction::new(vec![a.clone()]).unwrap(), &c, &m).unwrap();
        assert!((i1 + mu_a).abs() < 1e-13);
        let i2 = multiple_integral(&ChaosFunction::new(vec![a, b]).unwrap(), &c, &m).unwrap();
        assert!((i2 - mu_a * mu_b).abs() < 1e-13);
    }

    #[test]
    fn square_expansion_is_exact() {
        let m = atoms();
        let w = window(1.0, 1.0, 0.1, 2.0);
        let a = DetIntegrand::time_indicator(0.2, 0.9);
        let cfg = *m.quad();
        let mu = integrate::compensator(&a, &w, &m, 1.0, &cfg).unwrap();
        let f1 = ChaosFunction::new(vec![a.clone()]).unwrap();
        let f2 = ChaosFunction::new(vec![a.clone(), a.clone()]).unwrap();
        for seed in 0..20 {
            let c = prm::simulate(&w, &m, seed).unwrap();
            let nhat = integrate::int_nhat(&a, &c, &m, 1.0, &cfg).unwrap();
            let r = nhat * nhat - mu - multiple_integral(&f1, &c, &m).unwrap() - multiple_integral(&f2, &c, &m).unwrap();
            assert!(r.abs() < 1e-11, "{r}");
        }
    }

    #[test]
    fn smooth_gamma_third_order() {
        // Third-order iterated integral of a time-smooth slot with no jumps:
        // U₃(T) = −∫∫∫_{s1<s2<s3} γγγ = −(∫γ)³/6.
        let m = atoms();
        let w = window(1.0, 1.0, 0.1, 2.0);
        let g = DetIntegrand::time(Prim::Exp { rate: 0.7, abs: false });
        let p = PreparedChaos::new(&ChaosFunction::new(vec![g.clone(), g.clone(), g.clone()]).unwrap(), &w, &m).unwrap();
        let c = PointConfiguration::empty(w.clone(), 0);
        let mass = m.shell_mass(&w.shell).unwrap();
        let total = mass * ((0.7f64).exp() - 1.0) / 0.7;
        let want = -6.0 * total.powi(3) / 6.0;
        assert!((p.eval(&c) - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn gram_permanent() {
        let m = atoms();
        let w = window(1.0, 1.0, 0.1, 2.0);
        let (a, b) = boxes();
        let f = ChaosFunction::new(vec![a.clone(), b.clone()]).unwrap();
        let mass = m.shell_mass(&w.shell).unwrap();
        let t = f.isometry_target(&w, &m).unwrap();
        assert!((t - 0.25 * mass * mass).abs() < 1e-12);
        let g = ChaosFunction::new(vec![a.clone(), a]).unwrap();
        assert!((g.isometry_target(&w, &m).unwrap() - 2.0 * 0.25 * mass * mass).abs() < 1e-12);
    }
}
