//! Experiment configuration files.
//!
//! A config is a JSON object naming one experiment, the model (measure and
//! window), named integrand lists as expression trees, and Monte Carlo
//! settings. Unknown fields are rejected. Every error carries the JSON path
//! of the offending field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apps::{ChaosFunction, MartingaleConfig, KUNITA_RATIO_BOUND};
use crate::integrand::{self, DetIntegrand};
use crate::integrate;
use crate::interlace::{InterlaceProblem, LadderKind};
use crate::ito::{ItoConfig, SmoothFn};
use crate::mc::DEFAULT_K_SIGMA;
use crate::measure::LevyMeasure;
use crate::prm::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Isometry,
    Charfn,
    #[serde(rename = "ito1")]
    Ito1,
    #[serde(rename = "ito2")]
    Ito2,
    ItoLemma,
    Interlace,
    Kunita,
    Martingale,
    Chaos,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        Self::Simulate,
        Self::Isometry,
        Self::Charfn,
        Self::Ito1,
        Self::Ito2,
        Self::ItoLemma,
        Self::Interlace,
        Self::Kunita,
        Self::Martingale,
        Self::Chaos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Isometry => "isometry",
            Self::Charfn => "charfn",
            Self::Ito1 => "ito1",
            Self::Ito2 => "ito2",
            Self::ItoLemma => "ito-lemma",
            Self::Interlace => "interlace",
            Self::Kunita => "kunita",
            Self::Martingale => "martingale",
            Self::Chaos => "chaos",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Simulate => "simulate point configurations; mean and variance of the point count",
            Self::Isometry => "mean identity for ∫K dN and isometry for ∫H dN̂ per measure and integrand",
            Self::Charfn => "characteristic function of Z(B) against the Lévy–Khintchine exponent",
            Self::Ito1 => "four-term Itô formula with big/small jump split, plus agreement with the compensated form",
            Self::Ito2 => "three-term Itô formula with every jump compensated",
            Self::ItoLemma => "Itô formula for drift plus uncompensated jumps",
            Self::Interlace => "interlacing ladder and sup-norm diagnostics against the Chebyshev bounds",
            Self::Kunita => "Kunita moment ratios over a sweep and the p = 2 isometry",
            Self::Martingale => "exponential martingale mean, modulus, jump representation and characteristic function",
            Self::Chaos => "multiple integrals: isometry, orthogonality and the second-chaos expansion",
        }
    }

    /// Integrand lists the experiment reads, and whether each is required.
    fn integrand_slots(self) -> &'static [(&'static str, bool)] {
        match self {
            Self::Simulate | Self::Interlace | Self::Chaos => &[],
            Self::Charfn => &[],
            Self::Isometry => &[("h", true)],
            Self::ItoLemma => &[("g", true), ("k", true)],
            Self::Ito1 => &[("g", true), ("k", true), ("h", true)],
            Self::Ito2 => &[("g", true), ("h", true)],
            Self::Kunita => &[("x", true)],
            Self::Martingale => &[("h", true)],
        }
    }

    fn needs_functions(self) -> bool {
        matches!(self, Self::Ito1 | Self::Ito2 | Self::ItoLemma)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub k_sigma: f64,
    /// Pathwise residual bound; defaults per experiment when absent.
    pub residual: Option<f64>,
    pub agreement: f64,
    pub modulus: f64,
    pub representation: f64,
    /// Relative bound for the disjoint-support product identity.
    pub product: f64,
    pub kunita_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            k_sigma: DEFAULT_K_SIGMA,
            residual: None,
            agreement: 1e-10,
            modulus: 1e-10,
            representation: 1e-6,
            product: 1e-10,
            kunita_ratio: KUNITA_RATIO_BOUND,
        }
    }
}

impl Tolerances {
    pub fn residual_for(&self, kind: ExperimentKind) -> f64 {
        self.residual.unwrap_or(match kind {
            ExperimentKind::ItoLemma => 1e-8,
            _ => 1e-6,
        })
    }
}

fn default_split() -> f64 {
    1.0
}

fn default_ps() -> Vec<f64> {
    vec![2.0, 3.0, 4.0]
}

fn default_n_max() -> usize {
    6
}

fn default_rep_paths() -> usize {
    100
}

/// Experiment-specific settings; each experiment reads only its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Evaluation time; defaults to the window horizon.
    #[serde(default)]
    pub t: Option<f64>,
    /// Big/small jump split.
    #[serde(default = "default_split")]
    pub split: f64,
    /// Drift `a` of `Z(B)`.
    #[serde(default)]
    pub drift: f64,
    /// Frequencies for characteristic-function checks.
    #[serde(default)]
    pub us: Vec<f64>,
    /// Test functions for the Itô experiments.
    #[serde(default)]
    pub functions: Vec<SmoothFn<f64>>,
    #[serde(default)]
    pub ito: ItoConfig,
    /// Kunita exponents.
    #[serde(default = "default_ps")]
    pub ps: Vec<f64>,
    #[serde(default)]
    pub problem: Option<InterlaceProblem>,
    #[serde(default)]
    pub ladder: Option<LadderKind>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub martingale: MartingaleConfig,
    #[serde(default = "default_rep_paths")]
    pub representation_paths: usize,
    /// Chaos functions as lists of slot integrands.
    #[serde(default)]
    pub chaos: Vec<ChaosFunction>,
    /// Set `A` for the expansion of `N̂(A)²`.
    #[serde(default)]
    pub expansion_set: Option<DetIntegrand<f64>>,
}

impl Default for Params {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Label used in the summary; defaults to the experiment name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub measure: Option<LevyMeasure<f64>>,
    /// Additional measures for sweeps; run after `measure`.
    #[serde(default)]
    pub measures: Vec<LevyMeasure<f64>>,
    #[serde(default)]
    pub window: Option<Window<f64>>,
    #[serde(default)]
    pub integrands: BTreeMap<String, Vec<DetIntegrand<f64>>>,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub params: Params,
}

/// A configuration problem at a JSON path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a config from JSON text.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.name().to_string())
    }

    /// `measure` followed by `measures`.
    pub fn all_measures(&self) -> Vec<&LevyMeasure<f64>> {
        self.measure.iter().chain(self.measures.iter()).collect()
    }

    fn measure_path(&self, i: usize) -> String {
        match (&self.measure, i) {
            (Some(_), 0) => "measure".into(),
            (Some(_), i) => format!("measures[{}]", i - 1),
            (None, i) => format!("measures[{i}]"),
        }
    }

    pub fn integrand_list(&self, name: &str) -> &[DetIntegrand<f64>] {
        self.integrands.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn window(&self) -> &Window<f64> {
        self.window.as_ref().expect("validated window")
    }

    /// Evaluation time.
    pub fn time(&self) -> f64 {
        self.params.t.unwrap_or_else(|| self.window().horizon)
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.experiment;
        if self.replicates < 2 {
            return Err(err("replicates", "need at least 2 replicates"));
        }
        if self.workers == Some(0) {
            return Err(err("workers", "must be positive"));
        }
        if !(self.tolerances.k_sigma > 0.0) {
            return Err(err("tolerances.k_sigma", "must be positive"));
        }
        if kind == ExperimentKind::Interlace {
            return self.validate_interlace();
        }
        let measures = self.all_measures();
        if measures.is_empty() {
            return Err(err("measure", "a measure is required"));
        }
        let w = self.window.as_ref().ok_or_else(|| err("window", "a window is required"))?;
        for (i, m) in measures.iter().enumerate() {
            w.rate(m).map_err(|e| err("window.shell", format!("{e} for {}", self.measure_path(i))))?;
        }
        if let Some(t) = self.params.t {
            if !(0.0..=w.horizon).contains(&t) {
                return Err(err("params.t", format!("must lie in [0, {}]", w.horizon)));
            }
        }
        let slots = kind.integrand_slots();
        for name in self.integrands.keys() {
            if !slots.iter().any(|(s, _)| s == name) {
                return Err(err(format!("integrands.{name}"), format!("not used by `{kind}`")));
            }
        }
        for (name, required) in slots {
            let list = self.integrand_list(name);
            if *required && list.is_empty() {
                return Err(err(format!("integrands.{name}"), "at least one integrand is required"));
            }
            for (j, h) in list.iter().enumerate() {
                let path = format!("integrands.{name}[{j}]");
                integrand::check_dim(h, w.dim()).map_err(|e| err(&path, e))?;
                self.validate_integrand(name, h, &path)?;
            }
        }
        if kind.needs_functions() {
            if self.params.functions.is_empty() {
                return Err(err("params.functions", "at least one function is required"));
            }
            for (j, f) in self.params.functions.iter().enumerate() {
                f.validate().map_err(|e| err(format!("params.functions[{j}]"), e))?;
            }
        }
        match kind {
            ExperimentKind::Ito1 if !(self.params.split > 0.0) => {
                return Err(err("params.split", "must be positive"));
            }
            ExperimentKind::Charfn | ExperimentKind::Martingale if self.params.us.is_empty() => {
                return Err(err("params.us", "at least one frequency is required"));
            }
            ExperimentKind::Kunita => {
                for (j, &p) in self.params.ps.iter().enumerate() {
                    if !(p >= 2.0 && p.is_finite()) {
                        return Err(err(format!("params.ps[{j}]"), "exponent must be at least 2"));
                    }
                    for (i, m) in measures.iter().enumerate() {
                        let finite = m.shell_moment(&w.shell, p, false).is_ok_and(f64::is_finite);
                        if !finite {
                            return Err(err(
                                format!("params.ps[{j}]"),
                                format!("moment of order {p} is infinite for {}", self.measure_path(i)),
                            ));
                        }
                    }
                }
            }
            ExperimentKind::Chaos => {
                if self.params.chaos.is_empty() {
                    return Err(err("params.chaos", "at least one chaos function is required"));
                }
                for (j, f) in self.params.chaos.iter().enumerate() {
                    for (k, g) in f.slots().iter().enumerate() {
                        let path = format!("params.chaos[{j}][{k}]");
                        integrand::check_dim(g, w.dim()).map_err(|e| err(&path, e))?;
                        for m in &measures {
                            integrate::compensator(&g.square(), w, m, w.horizon, m.quad()).map_err(|e| err(&path, e))?;
                        }
                    }
                }
                if let Some(a) = &self.params.expansion_set {
                    integrand::check_dim(a, w.dim()).map_err(|e| err("params.expansion_set", e))?;
                    for m in &measures {
                        integrate::compensator(a, w, m, w.horizon, m.quad())
                            .map_err(|e| err("params.expansion_set", e))?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Finite moments required by the experiment for one integrand.
    fn validate_integrand(&self, name: &str, h: &DetIntegrand<f64>, path: &str) -> Result<(), ConfigError> {
        let w = self.window();
        let t = w.horizon;
        for m in self.all_measures() {
            let q = m.quad();
            let check = |x: &DetIntegrand<f64>| integrate::compensator(x, w, m, t, q).map(|_| ()).map_err(|e| err(path, e));
            match (self.experiment, name) {
                (ExperimentKind::Isometry, _) => {
                    check(h)?;
                    check(&h.square())?;
                }
                (_, "g") if !h.is_time_only() => return Err(err(path, "drift must depend on time only")),
                (ExperimentKind::Kunita | ExperimentKind::Martingale, _) if h.depends_on_jump() => {
                    return Err(err(path, "integrand must depend on (s, x) only"));
                }
                (ExperimentKind::Kunita | ExperimentKind::Martingale, _) => check(&h.square())?,
                (_, "h") => check(&h.square())?,
                _ => {}
            }
        }
        Ok(())
    }

    fn validate_interlace(&self) -> Result<(), ConfigError> {
        let problem = self
            .params
            .problem
            .as_ref()
            .ok_or_else(|| err("params.problem", "an interlacing problem is required"))?;
        let kind = self.params.ladder.ok_or_else(|| err("params.ladder", "a ladder kind is required"))?;
        match kind {
            LadderKind::SmallJump if problem.space.is_none() => {
                return Err(err("params.problem.box", "required for the small-jump ladder"));
            }
            LadderKind::SpatialI | LadderKind::SpatialII if problem.sim_shell.is_none() => {
                return Err(err("params.problem.sim_shell", "required for the spatial ladders"));
            }
            _ => {}
        }
        if !(problem.horizon > 0.0) {
            return Err(err("params.problem.horizon", "must be positive"));
        }
        if self.params.n_max < 1 {
            return Err(err("params.n_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// A list of config files, resolved relative to the suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub suite: Vec<PathBuf>,
}

/// Expands a path into config paths: a suite file lists members, any other
/// file is a single config.
pub fn expand_suite(path: &Path) -> Result<Vec<PathBuf>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| err("", format!("{}: {e}", path.display())))?;
    if value.get("suite").is_none() {
        return Ok(vec![path.to_path_buf()]);
    }
    let suite: Suite = serde_json::from_value(value).map_err(|e| err("suite", e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(suite.suite.iter().map(|p| base.join(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "experiment": "isometry",
        "measure": {"family": "discrete_atoms", "atoms": [{"z": 1.0, "w": 2.0}]},
        "window": {"horizon": 1.0, "box": {"lo": [0.0], "hi": [1.0]}, "shell": {"lo": 0.1, "hi": 2.0}},
        "integrands": {"h": [{"op": "poly", "var": "z", "coeffs": [0.0, 1.0]}]},
        "replicates": 100,
        "master_seed": 1
    }"#;

    #[test]
    fn parses_base() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Isometry);
        assert_eq!(c.label(), "isometry");
        assert_eq!(c.time(), 1.0);
    }

    #[test]
    fn bad_shell_has_path() {
        let text = BASE.replace(r#""lo": 0.1, "hi": 2.0"#, r#""lo": 3.0, "hi": 2.0"#);
        let e = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(e.path, "window.shell");
    }

    #[test]
    fn unknown_integrand_slot() {
        let text = BASE.replace(r#""h": ["#, r#""q": ["#);
        let e = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(e.path, "integrands.q");
    }

    #[test]
    fn experiment_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn too_few_replicates() {
        let text = BASE.replace(r#""replicates": 100"#, r#""replicates": 1"#);
        assert_eq!(ExperimentConfig::from_json(&text).unwrap_err().path, "replicates");
    }
}
