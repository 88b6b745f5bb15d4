//! Replicate fan-out with counter-based seeds and z-score verdicts.
//!
//! Replicate `k` draws from a ChaCha8 stream seeded by
//! `derive_seed(master_seed, k)`, and results are folded in replicate order,
//! so estimates never depend on how work was scheduled.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K_SIGMA: f64 = 4.0;

/// Environment variable read for the default worker count.
pub const WORKERS_ENV: &str = "LEVYNOISE_WORKERS";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum McError {
    #[error("replicate {index} failed: {message}")]
    Replicate { index: usize, message: String },
    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// splitmix64 finalizer over `(master, k)`.
pub fn derive_seed(master_seed: u64, k: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replicate_rng(master_seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, k as u64))
}

/// Worker count from the environment, else the number of logical CPUs.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f(k, rng_k)` for `k in 0..n` on `workers` threads and returns the
/// results in replicate order.
pub fn run_replicates<V, E, F>(
    n: usize,
    master_seed: u64,
    workers: usize,
    f: F,
) -> Result<Vec<V>, McError>
where
    V: Send,
    E: std::fmt::Display,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<V, E> + Sync,
{
    let job = |k: usize| {
        let mut rng = replicate_rng(master_seed, k);
        f(k, &mut rng).map_err(|e| McError::Replicate {
            index: k,
            message: e.to_string(),
        })
    };
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| McError::Pool(e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(job).collect())
}

/// Streaming mean and variance (Welford), mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self, master_seed: u64) -> McEstimate {
        McEstimate {
            mean: self.mean,
            se: (self.variance() / self.n.max(1) as f64).sqrt(),
            n: self.n,
            master_seed,
        }
    }
}

/// Monte Carlo estimate of a real mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub master_seed: u64,
}

impl McEstimate {
    /// Folds `values` in order.
    pub fn from_values(values: &[f64], master_seed: u64) -> Self {
        let mut acc = Accumulator::default();
        values.iter().for_each(|&v| acc.push(v));
        acc.estimate(master_seed)
    }
}

/// Monte Carlo estimate of a complex mean with componentwise errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub re: McEstimate,
    pub im: McEstimate,
}

impl ComplexEstimate {
    pub fn from_values(values: &[Complex64], master_seed: u64) -> Self {
        let re: Vec<f64> = values.iter().map(|c| c.re).collect();
        let im: Vec<f64> = values.iter().map(|c| c.im).collect();
        Self {
            re: McEstimate::from_values(&re, master_seed),
            im: McEstimate::from_values(&im, master_seed),
        }
    }

    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.re.mean, self.im.mean)
    }

    pub fn n(&self) -> usize {
        self.re.n
    }
}

/// Empirical characteristic function `n⁻¹ Σ e^{iu xₖ}`.
pub fn empirical_cf(values: &[f64], u: f64, master_seed: u64) -> ComplexEstimate {
    let z: Vec<Complex64> = values
        .iter()
        .map(|&x| Complex64::new((u * x).cos(), (u * x).sin()))
        .collect();
    ComplexEstimate::from_values(&z, master_seed)
}

/// Outcome of comparing an estimate with a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub z: f64,
    pub k_sigma: f64,
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

/// Two-sided: pass iff `|mean − target| ≤ k·se`.
pub fn verdict(e: &McEstimate, target: f64, k_sigma: f64) -> Verdict {
    let z = z_score(e.mean - target, e.se);
    Verdict {
        pass: z <= k_sigma,
        z,
        k_sigma,
    }
}

/// Componentwise two-sided verdict; `z` is the larger component score.
pub fn verdict_complex(e: &ComplexEstimate, target: Complex64, k_sigma: f64) -> Verdict {
    let a = verdict(&e.re, target.re, k_sigma);
    let b = verdict(&e.im, target.im, k_sigma);
    Verdict {
        pass: a.pass && b.pass,
        z: a.z.max(b.z),
        k_sigma,
    }
}

/// One-sided: pass iff `mean ≤ bound + k·se`; `z` is signed excess in SE units.
pub fn verdict_upper(e: &McEstimate, bound: f64, k_sigma: f64) -> Verdict {
    let diff = e.mean - bound;
    let z = if diff <= 0.0 {
        if e.se > 0.0 {
            diff / e.se
        } else {
            0.0
        }
    } else {
        z_score(diff, e.se)
    };
    Verdict {
        pass: diff <= 0.0 || z <= k_sigma,
        z,
        k_sigma,
    }
}

/// Pass iff `|value − target| ≤ tol` (pathwise identities).
pub fn verdict_abs(value: f64, target: f64, tol: f64) -> Verdict {
    let diff = (value - target).abs();
    Verdict {
        pass: diff <= tol,
        z: if tol > 0.0 { diff / tol } else { z_score(diff, 0.0) },
        k_sigma: 1.0,
    }
}
