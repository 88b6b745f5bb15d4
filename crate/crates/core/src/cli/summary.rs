//! Machine-readable run summaries and CSV helpers.
//!
//! Summary schema (stable, field order fixed):
//!
//! ```json
//! {
//!   "experiment": "isometry",
//!   "name": "isometry",
//!   "master_seed": 20240601,
//!   "replicates": 100000,
//!   "pass": true,
//!   "verdicts": [
//!     {"name": "...", "estimate": 0.1, "se": 0.01, "target": 0.1, "z": 0.3, "pass": true}
//!   ]
//! }
//! ```
//!
//! `se` is `null` for pathwise checks, where `z` is the value divided by its
//! tolerance. Non-finite numbers serialize as `null`.

use serde::{Deserialize, Serialize};

use crate::mc::{McEstimate, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

impl VerdictRow {
    /// Row for a Monte Carlo estimate.
    pub fn mc(name: impl Into<String>, e: &McEstimate, target: f64, v: &Verdict) -> Self {
        Self {
            name: name.into(),
            estimate: e.mean,
            se: Some(e.se),
            target,
            z: v.z,
            pass: v.pass,
        }
    }

    /// Row for a pathwise quantity that must not exceed `tol`.
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        let pass = value <= tol;
        Self {
            name: name.into(),
            estimate: value,
            se: None,
            target: tol,
            z: if tol > 0.0 { value / tol } else { f64::INFINITY },
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub name: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub pass: bool,
    pub verdicts: Vec<VerdictRow>,
}

impl Summary {
    pub fn new(experiment: &str, name: String, master_seed: u64, replicates: usize, verdicts: Vec<VerdictRow>) -> Self {
        Self {
            experiment: experiment.to_string(),
            name,
            master_seed,
            replicates,
            pass: verdicts.iter().all(|v| v.pass),
            verdicts,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerdictRow> {
        self.verdicts.iter().filter(|v| !v.pass)
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Builds CSV text from a header and rows of already formatted cells.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// CSV of verdict rows.
pub fn verdicts_csv(rows: &[VerdictRow]) -> String {
    csv_text(
        &["name", "estimate", "se", "target", "z", "pass"],
        rows.iter().map(|r| {
            vec![
                r.name.clone(),
                fmt17(r.estimate),
                r.se.map(fmt17).unwrap_or_default(),
                fmt17(r.target),
                fmt17(r.z),
                r.pass.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_is_conjunction() {
        let rows = vec![VerdictRow::at_most("a", 1.0, 2.0), VerdictRow::at_most("b", 3.0, 2.0)];
        let s = Summary::new("x", "x".into(), 0, 2, rows);
        assert!(!s.pass);
        assert_eq!(s.failures().count(), 1);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
