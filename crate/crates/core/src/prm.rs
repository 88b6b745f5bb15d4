//! Poisson random measure restricted to a bounded window `[0,T] × B × Γ`.
//!
//! Given the Poisson count with mean `T·|B|·ν(Γ)`, times are i.i.d. uniform
//! on `[0,T]` (then sorted), locations uniform on the box and jump sizes
//! i.i.d. from ν restricted to Γ. Sub-windows are obtained by [`restrict`],
//! never by simulating again, so nested windows stay coupled.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{LevyMeasure, MeasureError, Shell};
use crate::scalar::Real;

/// Maximum spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum PrmError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("sub-window is not contained in the simulated window")]
    NotContained,
    #[error("intensity is infinite; use a shell bounded away from zero")]
    InfiniteIntensity,
    #[error("expected point count {0:e} is too large to simulate")]
    TooManyPoints(f64),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PrmError> = std::result::Result<T, E>;

/// Axis-aligned box `[lo₁,hi₁) × … × [lo_d,hi_d)` in `ℝᵈ`, `d ≤ 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawBox<T>", into = "RawBox<T>")]
pub struct SpaceBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RawBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> TryFrom<RawBox<T>> for SpaceBox<T> {
    type Error = PrmError;
    fn try_from(r: RawBox<T>) -> Result<Self> {
        SpaceBox::new(r.lo, r.hi)
    }
}

impl<T: Real> From<SpaceBox<T>> for RawBox<T> {
    fn from(b: SpaceBox<T>) -> Self {
        RawBox { lo: b.lo, hi: b.hi }
    }
}

impl<T: Real> SpaceBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() || lo.len() > MAX_DIM || lo.len() != hi.len() {
            return Err(PrmError::InvalidWindow(format!(
                "box needs 1..={MAX_DIM} matching bounds, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(PrmError::InvalidWindow(format!(
                    "box side [{a}, {b}) must be finite with positive length"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-a, a]^d`.
    pub fn cube(a: T, dim: usize) -> Result<Self> {
        Self::new(vec![-a; dim], vec![a; dim])
    }

    pub fn interval(lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn volume(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(T::one(), |v, (a, b)| v * (*b - *a))
    }

    #[inline]
    pub fn contains(&self, x: &[T]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((a, b), v)| v >= a && v < b)
    }

    pub fn contains_box(&self, other: &SpaceBox<T>) -> bool {
        other.dim() == self.dim()
            && self
                .lo
                .iter()
                .zip(&self.hi)
                .zip(other.lo.iter().zip(&other.hi))
                .all(|((a, b), (c, d))| c >= a && d <= b)
    }
}

/// The simulation window `[0, horizon] × space × shell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Window<T> {
    pub horizon: T,
    #[serde(rename = "box")]
    pub space: SpaceBox<T>,
    pub shell: Shell<T>,
}

impl<T: Real> Window<T> {
    pub fn new(horizon: T, space: SpaceBox<T>, shell: Shell<T>) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(PrmError::InvalidWindow(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            space,
            shell,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// `λ = |B|·ν(Γ)`, the intensity of the time process.
    pub fn rate(&self, m: &LevyMeasure<T>) -> Result<T> {
        match m.shell_mass(&self.shell) {
            Ok(mass) => Ok(self.space.volume() * mass),
            Err(MeasureError::InfiniteMass { .. }) => Err(PrmError::InfiniteIntensity),
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains_window(&self, sub: &Window<T>) -> bool {
        sub.horizon <= self.horizon
            && self.space.contains_box(&sub.space)
            && self.shell.contains_shell(&sub.shell)
    }

    #[inline]
    pub fn contains_point(&self, p: &Point<T>) -> bool {
        p.t >= T::zero()
            && p.t <= self.horizon
            && self.space.contains(p.x())
            && self.shell.contains(p.z)
    }

    pub fn with_horizon(&self, horizon: T) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_space(&self, space: SpaceBox<T>) -> Self {
        Self {
            space,
            ..self.clone()
        }
    }

    pub fn with_shell(&self, shell: Shell<T>) -> Self {
        Self {
            shell,
            ..self.clone()
        }
    }
}

/// One atom `(t, x, z)` of the point configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T> {
    pub t: T,
    coords: [T; MAX_DIM],
    dim: u8,
    pub z: T,
}

impl<T: Real> Point<T> {
    pub fn new(t: T, x: &[T], z: T) -> Self {
        assert!(x.len() <= MAX_DIM && !x.is_empty(), "point dimension out of range");
        let mut coords = [T::zero(); MAX_DIM];
        coords[..x.len()].copy_from_slice(x);
        Self {
            t,
            coords,
            dim: x.len() as u8,
            z,
        }
    }

    #[inline]
    pub fn x(&self) -> &[T] {
        &self.coords[..self.dim as usize]
    }

    /// Time order; ties broken by location then jump size.
    fn order(&self, other: &Self) -> Ordering {
        total(self.t, other.t)
            .then_with(|| {
                self.x()
                    .iter()
                    .zip(other.x())
                    .map(|(a, b)| total(*a, *b))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| total(self.z, other.z))
    }
}

fn total<T: Real>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// One realization of N on a window: points sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration<T> {
    points: Vec<Point<T>>,
    window: Window<T>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct CsvHeader<T> {
    window: Window<T>,
    seed: u64,
}

impl<T: Real> PointConfiguration<T> {
    /// Builds a configuration from explicit points, sorting them and checking
    /// that they lie in the window.
    pub fn from_points(window: Window<T>, mut points: Vec<Point<T>>, seed: u64) -> Result<Self> {
        for p in &points {
            if p.dim as usize != window.dim() || !window.contains_point(p) {
                return Err(PrmError::InvalidWindow(format!(
                    "point (t={}, z={}) lies outside the window",
                    p.t, p.z
                )));
            }
        }
        points.sort_by(|a, b| a.order(b));
        Ok(Self {
            points,
            window,
            seed,
        })
    }

    pub fn empty(window: Window<T>, seed: u64) -> Self {
        Self {
            points: Vec::new(),
            window,
            seed,
        }
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn window(&self) -> &Window<T> {
        &self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points with `tᵢ ≤ t`.
    pub fn count_until(&self, t: T) -> usize {
        self.points.partition_point(|p| p.t <= t)
    }

    /// Writes the configuration as CSV with a leading `# {json}` header line.
    pub fn to_csv_string(&self) -> String {
        let header = CsvHeader {
            window: self.window.clone(),
            seed: self.seed,
        };
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        out.push('t');
        for k in 0..self.window.dim() {
            let _ = write!(out, ",x{}", k + 1);
        }
        out.push_str(",z\n");
        for p in &self.points {
            let _ = write!(out, "{:.16e}", p.t);
            for v in p.x() {
                let _ = write!(out, ",{:.16e}", v);
            }
            let _ = writeln!(out, ",{:.16e}", p.z);
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let (first, rest) = text
            .split_once('\n')
            .ok_or_else(|| PrmError::Csv("missing header line".into()))?;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| PrmError::Csv("first line must be '# {json header}'".into()))?;
        let header: CsvHeader<T> =
            serde_json::from_str(json).map_err(|e| PrmError::Csv(format!("header: {e}")))?;
        let dim = header.window.dim();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(rest.as_bytes());
        let cols = reader
            .headers()
            .map_err(|e| PrmError::Csv(e.to_string()))?
            .len();
        if cols != dim + 2 {
            return Err(PrmError::Csv(format!(
                "expected {} columns for dimension {dim}, found {cols}",
                dim + 2
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<T>()
                .map_err(|_| PrmError::Csv(format!("bad number '{s}'")))
        };
        let mut points = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| PrmError::Csv(e.to_string()))?;
            let t = parse(&rec[0])?;
            let mut x = [T::zero(); MAX_DIM];
            for k in 0..dim {
                x[k] = parse(&rec[k + 1])?;
            }
            let z = parse(&rec[dim + 1])?;
            points.push(Point::new(t, &x[..dim], z));
        }
        Self::from_points(header.window, points, header.seed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Simulates N on `w` with a ChaCha8 stream seeded by `seed`.
pub fn simulate<T: Real>(
    w: &Window<T>,
    m: &LevyMeasure<T>,
    seed: u64,
) -> Result<PointConfiguration<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(w, m, &mut rng, seed)
}

/// Simulates N on `w` drawing from `rng`; `seed` is recorded as provenance.
pub fn simulate_with_rng<T: Real, R: Rng + ?Sized>(
    w: &Window<T>,
    m: &LevyMeasure<T>,
    rng: &mut R,
    seed: u64,
) -> Result<PointConfiguration<T>> {
    let lambda = w.rate(m)?;
    let mean = (lambda * w.horizon).as_f64();
    if mean <= 0.0 {
        return Ok(PointConfiguration::empty(w.clone(), seed));
    }
    if mean > 5e8 {
        return Err(PrmError::TooManyPoints(mean));
    }
    let count = Poisson::new(mean)
        .map_err(|e| PrmError::InvalidWindow(e.to_string()))?
        .sample(rng) as usize;
    let dim = w.dim();
    let mut times: Vec<T> = (0..count)
        .map(|_| T::lit(rng.random::<f64>()) * w.horizon)
        .collect();
    times.sort_unstable_by(|a, b| total(*a, *b));
    let mut points = Vec::with_capacity(count);
    let mut x = [T::zero(); MAX_DIM];
    for t in times {
        for (k, xk) in x.iter_mut().enumerate().take(dim) {
            let lo = w.space.lo[k];
            let hi = w.space.hi[k];
            *xk = (lo + T::lit(rng.random::<f64>()) * (hi - lo)).min(hi);
            if *xk >= hi {
                *xk = lo;
            }
        }
        let z = m.sample_shell(&w.shell, rng)?;
        points.push(Point::new(t, &x[..dim], z));
    }
    // equal times have probability zero but rounding can produce them
    if points.windows(2).any(|p| p[0].t == p[1].t) {
        points.sort_by(|a, b| a.order(b));
    }
    Ok(PointConfiguration {
        points,
        window: w.clone(),
        seed,
    })
}

/// Keeps exactly the points of `c` that lie inside `sub`.
pub fn restrict<T: Real>(c: &PointConfiguration<T>, sub: &Window<T>) -> Result<PointConfiguration<T>> {
    if !c.window.contains_window(sub) {
        return Err(PrmError::NotContained);
    }
    let points = c
        .points
        .iter()
        .filter(|p| sub.contains_point(p))
        .copied()
        .collect();
    Ok(PointConfiguration {
        points,
        window: sub.clone(),
        seed: c.seed,
    })
}
