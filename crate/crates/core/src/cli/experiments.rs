//! Named experiments: each turns a validated config into verdict rows and
//! CSV artifacts.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;

use crate::apps::{self, ExpMartingale};
use crate::integrand::DetIntegrand;
use crate::integrate;
use crate::interlace;
use crate::ito::{self, ItoTerms};
use crate::mc::{self, McEstimate};
use crate::measure::LevyMeasure;
use crate::prm::{self, Window};

use super::config::{ExperimentConfig, ExperimentKind};
use super::summary::{csv_text, fmt17, verdicts_csv, Summary, VerdictRow};

/// A failure while running an experiment, after validation succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub experiment: String,
    pub message: String,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "experiment `{}`: {}", self.experiment, self.message)
    }
}

impl std::error::Error for RunError {}

type Res<T> = Result<T, String>;

fn s<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Summary plus named CSV artifacts.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    /// Writes `summary.json`, `verdicts.csv` and every artifact into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary.to_json())?;
        std::fs::write(dir.join("verdicts.csv"), verdicts_csv(&self.summary.verdicts))?;
        for (name, text) in &self.artifacts {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

/// Runs the configured experiment on `workers` threads.
pub fn run(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome, RunError> {
    let mut ctx = Ctx {
        cfg,
        workers: workers.max(1),
        rows: Vec::new(),
        artifacts: Vec::new(),
    };
    let r = match cfg.experiment {
        ExperimentKind::Simulate => ctx.simulate(),
        ExperimentKind::Isometry => ctx.isometry(),
        ExperimentKind::Charfn => ctx.charfn(),
        ExperimentKind::ItoLemma | ExperimentKind::Ito1 | ExperimentKind::Ito2 => ctx.ito(),
        ExperimentKind::Interlace => ctx.interlace(),
        ExperimentKind::Kunita => ctx.kunita(),
        ExperimentKind::Martingale => ctx.martingale(),
        ExperimentKind::Chaos => ctx.chaos(),
    };
    r.map_err(|message| RunError {
        experiment: cfg.label(),
        message,
    })?;
    Ok(Outcome {
        summary: Summary::new(cfg.experiment.name(), cfg.label(), cfg.master_seed, cfg.replicates, ctx.rows),
        artifacts: ctx.artifacts,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    workers: usize,
    rows: Vec<VerdictRow>,
    artifacts: Vec<(String, String)>,
}

impl<'a> Ctx<'a> {
    fn k(&self) -> f64 {
        self.cfg.tolerances.k_sigma
    }

    /// Seed for the `i`-th independent case of the experiment.
    fn case_seed(&self, i: usize) -> u64 {
        mc::derive_seed(self.cfg.master_seed ^ 0xA5A5_5A5A_C3C3_3C3C, i as u64)
    }

    fn measures(&self) -> Vec<&'a LevyMeasure<f64>> {
        let cfg: &'a ExperimentConfig = self.cfg;
        cfg.all_measures()
    }

    fn window(&self) -> &'a Window<f64> {
        let cfg: &'a ExperimentConfig = self.cfg;
        cfg.window()
    }

    fn mc_row(&mut self, name: String, e: &McEstimate, target: f64) {
        let v = mc::verdict(e, target, self.k());
        self.rows.push(VerdictRow::mc(name, e, target, &v));
    }

    /// Pointwise characteristic-function row: `|φ̂(u) − φ(u)| ≤ k/√n`.
    fn cf_row(&mut self, name: String, estimate: Complex64, target: Complex64, n: usize) {
        let err = (estimate - target).norm();
        let unit = 1.0 / (n as f64).sqrt();
        let z = err / unit;
        self.rows.push(VerdictRow {
            name,
            estimate: err,
            se: Some(unit),
            target: 0.0,
            z,
            pass: z <= self.k(),
        });
    }

    fn simulate(&mut self) -> Res<()> {
        let w = self.window().clone();
        let n = self.cfg.replicates;
        for (i, m) in self.measures().into_iter().enumerate() {
            let seed = self.case_seed(i);
            let lambda = w.horizon * w.rate(m).map_err(s)?;
            let counts = mc::run_replicates(n, seed, self.workers, |k, rng| {
                let c = prm::simulate_with_rng(&w, m, rng, mc::derive_seed(seed, k as u64))?;
                let points = (k == 0).then(|| c.to_csv_string());
                Ok::<_, prm::PrmError>((c.len() as f64, points))
            })
            .map_err(s)?;
            let vals: Vec<f64> = counts.iter().map(|c| c.0).collect();
            let dev: Vec<f64> = vals.iter().map(|v| (v - lambda).powi(2)).collect();
            self.mc_row(format!("count_mean[m{i}]"), &McEstimate::from_values(&vals, seed), lambda);
            self.mc_row(format!("count_var[m{i}]"), &McEstimate::from_values(&dev, seed), lambda);
            let points = counts.into_iter().next().and_then(|c| c.1).unwrap_or_default();
            let file = if i == 0 { "points.csv".to_string() } else { format!("points_m{i}.csv") };
            self.artifacts.push((file, points));
        }
        Ok(())
    }

    fn isometry(&mut self) -> Res<()> {
        let w = self.window().clone();
        let t = self.cfg.time();
        let hs = self.cfg.integrand_list("h").to_vec();
        let mut table = Vec::new();
        for (i, m) in self.measures().into_iter().enumerate() {
            let q = m.quad();
            let comp = hs
                .iter()
                .map(|h| integrate::compensator(h, &w, m, t, q))
                .collect::<Result<Vec<_>, _>>()
                .map_err(s)?;
            let comp2 = hs
                .iter()
                .map(|h| integrate::compensator(&h.square(), &w, m, t, q))
                .collect::<Result<Vec<_>, _>>()
                .map_err(s)?;
            let seed = self.case_seed(i);
            let samples = mc::run_replicates(self.cfg.replicates, seed, self.workers, |k, rng| {
                let c = prm::simulate_with_rng(&w, m, rng, mc::derive_seed(seed, k as u64))?;
                Ok::<_, prm::PrmError>(hs.iter().map(|h| integrate::int_n(h, &c, t)).collect::<Vec<f64>>())
            })
            .map_err(s)?;
            for (j, _) in hs.iter().enumerate() {
                let n: Vec<f64> = samples.iter().map(|r| r[j]).collect();
                let nhat: Vec<f64> = n.iter().map(|v| v - comp[j]).collect();
                let sq: Vec<f64> = nhat.iter().map(|v| v * v).collect();
                let tag = format!("m{i},h{j}");
                let rows = [
                    (format!("mean_identity[{tag}]"), McEstimate::from_values(&n, seed), comp[j]),
                    (format!("zero_mean[{tag}]"), McEstimate::from_values(&nhat, seed), 0.0),
                    (format!("isometry[{tag}]"), McEstimate::from_values(&sq, seed), comp2[j]),
                ];
                for (name, e, target) in rows {
                    table.push(vec![
                        i.to_string(),
                        j.to_string(),
                        name.split('[').next().unwrap_or_default().to_string(),
                        fmt17(e.mean),
                        fmt17(e.se),
                        fmt17(target),
                    ]);
                    self.mc_row(name, &e, target);
                }
            }
        }
        self.artifacts.push((
            "isometry.csv".into(),
            csv_text(&["measure", "integrand", "quantity", "estimate", "se", "target"], table),
        ));
        Ok(())
    }

    fn charfn(&mut self) -> Res<()> {
        let w = self.window().clone();
        let (a, split, t) = (self.cfg.params.drift, self.cfg.params.split, self.cfg.time());
        let us = self.cfg.params.us.clone();
        let mut table = Vec::new();
        for (i, m) in self.measures().into_iter().enumerate() {
            let seed = self.case_seed(i);
            let q = *m.quad();
            let zs = mc::run_replicates(self.cfg.replicates, seed, self.workers, |k, rng| {
                let c = prm::simulate_with_rng(&w, m, rng, mc::derive_seed(seed, k as u64)).map_err(s)?;
                integrate::z_of_set(a, &w.space, 0.0, t, &c, m, split, &q).map_err(s)
            })
            .map_err(s)?;
            let vol = t * w.space.volume();
            for &u in &us {
                let e = mc::empirical_cf(&zs, u, seed);
                let lk = m.levy_khintchine_shell(&w.shell, u, split).map_err(s)?;
                let target = ((Complex64::new(0.0, u * a) + lk) * vol).exp();
                table.push(vec![
                    i.to_string(),
                    fmt17(u),
                    fmt17(e.re.mean),
                    fmt17(e.im.mean),
                    fmt17(target.re),
                    fmt17(target.im),
                ]);
                self.cf_row(format!("charfn[m{i},u={u}]"), e.mean(), target, zs.len());
            }
        }
        self.artifacts.push((
            "charfn.csv".into(),
            csv_text(&["measure", "u", "re", "im", "target_re", "target_im"], table),
        ));
        Ok(())
    }

    fn ito(&mut self) -> Res<()> {
        let kind = self.cfg.experiment;
        let w = self.window().clone();
        let t = self.cfg.time();
        let split = self.cfg.params.split;
        let icfg = self.cfg.params.ito.clone();
        let fs = self.cfg.params.functions.clone();
        let zero = vec![DetIntegrand::zero()];
        let gs = self.cfg.integrand_list("g").to_vec();
        let ks = match kind {
            ExperimentKind::Ito2 => zero.clone(),
            _ => self.cfg.integrand_list("k").to_vec(),
        };
        let hs = match kind {
            ExperimentKind::ItoLemma => zero,
            _ => self.cfg.integrand_list("h").to_vec(),
        };
        struct Cell {
            tag: String,
            f: usize,
            g: usize,
            k: usize,
            h: usize,
            /// Drift for the compensated form when `K = H`.
            shared: Option<DetIntegrand<f64>>,
        }
        let tol = self.cfg.tolerances.residual_for(kind);
        let mut csv_rows = Vec::new();
        for (mi, m) in self.measures().into_iter().enumerate() {
            let mut cells = Vec::new();
            for f in 0..fs.len() {
                for g in 0..gs.len() {
                    for k in 0..ks.len() {
                        for h in 0..hs.len() {
                            let tag = match kind {
                                ExperimentKind::ItoLemma => format!("m{mi},f{f},g{g},k{k}"),
                                ExperimentKind::Ito1 => format!("m{mi},f{f},g{g},k{k},h{h}"),
                                _ => format!("m{mi},f{f},g{g},h{h}"),
                            };
                            let shared = match (kind, w.shell.split_at(split).1) {
                                (ExperimentKind::Ito1, Some(big)) if ks[k] == hs[h] && !hs[h].is_zero() => Some(
                                    gs[g].add(&hs[h].compensator_density(&w.space, m, &big, m.quad()).map_err(s)?),
                                ),
                                (ExperimentKind::Ito1, None) if ks[k] == hs[h] => Some(gs[g].clone()),
                                _ => None,
                            };
                            cells.push(Cell { tag, f, g, k, h, shared });
                        }
                    }
                }
            }
            let seed = self.case_seed(mi);
            let results = mc::run_replicates(self.cfg.replicates, seed, self.workers, |r, rng| {
                let c = prm::simulate_with_rng(&w, m, rng, mc::derive_seed(seed, r as u64)).map_err(s)?;
                cells
                    .iter()
                    .map(|cell| {
                        let f = &fs[cell.f];
                        let terms = match kind {
                            ExperimentKind::ItoLemma => ito::ito_rhs_lemma(f, &gs[cell.g], &ks[cell.k], &c, m, t, &icfg),
                            ExperimentKind::Ito1 => {
                                ito::ito_rhs_thm1(f, &gs[cell.g], &ks[cell.k], &hs[cell.h], &c, m, split, t, &icfg)
                            }
                            _ => ito::ito_rhs_thm2(f, &gs[cell.g], &hs[cell.h], &c, m, t, &icfg),
                        }
                        .map_err(s)?;
                        let agree = match &cell.shared {
                            Some(g2) => {
                                let other = ito::ito_rhs_thm2(f, g2, &hs[cell.h], &c, m, t, &icfg).map_err(s)?;
                                Some((terms.rhs - other.rhs).abs())
                            }
                            None => None,
                        };
                        Ok((terms, agree))
                    })
                    .collect::<Res<Vec<(ItoTerms<f64>, Option<f64>)>>>()
            })
            .map_err(s)?;
            for (ci, cell) in cells.iter().enumerate() {
                let worst = results.iter().map(|r| r[ci].0.residual.abs()).fold(0.0, f64::max);
                self.rows.push(VerdictRow::at_most(format!("residual[{}]", cell.tag), worst, tol));
                if cell.shared.is_some() {
                    let gap = results.iter().filter_map(|r| r[ci].1).fold(0.0, f64::max);
                    let tol = self.cfg.tolerances.agreement;
                    self.rows.push(VerdictRow::at_most(format!("agreement[{}]", cell.tag), gap, tol));
                }
                if kind != ExperimentKind::ItoLemma && !hs[cell.h].is_zero() {
                    let t3: Vec<f64> = results.iter().map(|r| r[ci].0.terms[2]).collect();
                    let e = McEstimate::from_values(&t3, seed);
                    self.mc_row(format!("term3_mean[{}]", cell.tag), &e, 0.0);
                }
                for (r, row) in results.iter().enumerate() {
                    let x = &row[ci].0;
                    let mut line = vec![cell.tag.clone(), r.to_string(), fmt17(x.t), fmt17(x.lhs)];
                    line.extend(x.terms.iter().map(|&v| fmt17(v)));
                    line.extend([fmt17(x.rhs), fmt17(x.residual)]);
                    csv_rows.push(line);
                }
            }
        }
        self.artifacts.push((
            "residuals.csv".into(),
            csv_text(
                &["cell", "replicate", "t", "lhs", "term1", "term2", "term3", "term4", "rhs", "residual"],
                csv_rows,
            ),
        ));
        Ok(())
    }

    fn interlace(&mut self) -> Res<()> {
        let cfg: &'a ExperimentConfig = self.cfg;
        let p = &cfg.params;
        let problem = p.problem.as_ref().expect("validated problem");
        let kind = p.ladder.expect("validated ladder kind");
        let ladder = problem.ladder(kind, p.n_max).map_err(s)?;
        if ladder.levels.len() < 2 {
            return Err(format!(
                "ladder has {} level(s) (flag {:?}); nothing to diagnose",
                ladder.levels.len(),
                ladder.flag
            ));
        }
        let seed = self.case_seed(0);
        let report = interlace::interlacing_diagnostic(&ladder, problem, self.cfg.replicates, seed, self.workers, self.k())
            .map_err(s)?;
        for d in &report.levels {
            let n = d.n;
            self.rows.push(VerdictRow::mc(format!("sup2[n={n}]"), &d.sup2, d.bound, &d.verdict_sup2));
            self.rows
                .push(VerdictRow::mc(format!("exceed[n={n}]"), &d.exceed, d.bound_freq, &d.verdict_freq));
            if let (Some(e), Some(b), Some(v)) = (&d.sup_big, d.bound_big, &d.verdict_big) {
                self.rows.push(VerdictRow::mc(format!("sup_big[n={n}]"), e, b, v));
            }
        }
        self.artifacts.push(("interlace.csv".into(), report.to_csv()));
        Ok(())
    }

    fn kunita(&mut self) -> Res<()> {
        let w = self.window().clone();
        let t = self.cfg.time();
        let xs = self.cfg.integrand_list("x").to_vec();
        let ps = self.cfg.params.ps.clone();
        let bound = self.cfg.tolerances.kunita_ratio;
        let mut table = Vec::new();
        let mut case = 0;
        for (i, m) in self.measures().into_iter().enumerate() {
            for (j, x) in xs.iter().enumerate() {
                let seed = self.case_seed(case);
                case += 1;
                let reports =
                    apps::kunita_report(x, m, &w, &ps, t, self.cfg.replicates, seed, self.workers, self.k()).map_err(s)?;
                for r in &reports {
                    let tag = format!("m{i},x{j},p={}", r.p);
                    if let Some(iso) = &r.isometry {
                        self.rows.push(VerdictRow::mc(
                            format!("isometry[m{i},x{j}]"),
                            &iso.estimate,
                            iso.target,
                            &iso.verdict,
                        ));
                    }
                    if let Some(norm) = r.normalized {
                        self.rows.push(VerdictRow::at_most(format!("ratio[{tag}]"), norm, bound));
                    }
                    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
                    table.push(vec![
                        i.to_string(),
                        j.to_string(),
                        fmt17(r.p),
                        fmt17(r.t),
                        fmt17(r.lhs.mean),
                        fmt17(r.lhs.se),
                        fmt17(r.bracket),
                        fmt17(r.l2),
                        fmt17(r.lp),
                        fmt17(r.v),
                        fmt17(r.m_p),
                        fmt17(r.scale),
                        opt(r.ratio),
                        opt(r.normalized),
                    ]);
                }
            }
        }
        self.artifacts.push((
            "kunita.csv".into(),
            csv_text(
                &[
                    "measure", "integrand", "p", "t", "lhs", "lhs_se", "bracket", "l2", "lp", "v", "m_p", "scale",
                    "ratio", "normalized",
                ],
                table,
            ),
        ));
        Ok(())
    }

    fn martingale(&mut self) -> Res<()> {
        let w = self.window().clone();
        let t = self.cfg.time();
        let hs = self.cfg.integrand_list("h").to_vec();
        let us = self.cfg.params.us.clone();
        let tol = self.cfg.tolerances.clone();
        let mut table = Vec::new();
        let mut case = 0;
        for (i, m) in self.measures().into_iter().enumerate() {
            for (j, h) in hs.iter().enumerate() {
                let seed = self.case_seed(case);
                case += 1;
                let em = ExpMartingale::new(h, &w, m, &self.cfg.params.martingale).map_err(s)?;
                let r = apps::martingale_check(
                    &em,
                    t,
                    &us,
                    self.cfg.replicates,
                    self.cfg.params.representation_paths,
                    seed,
                    self.workers,
                    self.k(),
                )
                .map_err(s)?;
                let tag = format!("m{i},h{j}");
                self.mc_row(format!("mean_re[{tag}]"), &r.mean.re, 1.0);
                self.mc_row(format!("mean_im[{tag}]"), &r.mean.im, 0.0);
                self.rows
                    .push(VerdictRow::at_most(format!("modulus[{tag}]"), r.modulus_error, tol.modulus));
                self.rows.push(VerdictRow::at_most(
                    format!("representation[{tag}]"),
                    r.representation_residual,
                    tol.representation,
                ));
                for c in &r.charfn {
                    self.cf_row(format!("charfn[{tag},u={}]", c.u), c.estimate.mean(), c.target, c.estimate.n());
                    table.push(vec![
                        i.to_string(),
                        j.to_string(),
                        fmt17(c.u),
                        fmt17(c.estimate.re.mean),
                        fmt17(c.estimate.im.mean),
                        fmt17(c.target.re),
                        fmt17(c.target.im),
                    ]);
                }
            }
        }
        self.artifacts.push((
            "martingale_charfn.csv".into(),
            csv_text(&["measure", "integrand", "u", "re", "im", "target_re", "target_im"], table),
        ));
        Ok(())
    }

    fn chaos(&mut self) -> Res<()> {
        let w = self.window().clone();
        let cfg: &'a ExperimentConfig = self.cfg;
        let p = &cfg.params;
        for (i, m) in self.measures().into_iter().enumerate() {
            let seed = self.case_seed(i);
            let r = apps::chaos_checks(
                &p.chaos,
                p.expansion_set.as_ref(),
                m,
                &w,
                self.cfg.replicates,
                seed,
                self.workers,
                self.k(),
            )
            .map_err(s)?;
            for row in &r.rows {
                self.rows
                    .push(VerdictRow::mc(format!("{}[m{i}]", row.name), &row.estimate, row.target, &row.verdict));
            }
            if let Some(e) = r.product_error {
                self.rows
                    .push(VerdictRow::at_most(format!("product[m{i}]"), e, self.cfg.tolerances.product));
            }
        }
        Ok(())
    }
}
