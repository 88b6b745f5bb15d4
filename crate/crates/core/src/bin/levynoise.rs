use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use levynoise::cli::{self, config, ExperimentConfig, ExperimentKind};
use levynoise::mc;

/// Simulate space-time Lévy white noise and check jump-integral identities.
#[derive(Parser)]
#[command(name = "levynoise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more configs (or suite files) and write their artifacts.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the replicate count.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override the output directory; with several configs each writes
        /// to a subdirectory named after it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: LEVYNOISE_WORKERS or the CPU count).
        #[arg(long, env = mc::WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Parse and validate configs without running them.
    Validate {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// List the available experiment names.
    ListExperiments,
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load(paths: &[PathBuf]) -> Result<Vec<(PathBuf, ExperimentConfig)>, String> {
    let mut out = Vec::new();
    for p in paths {
        for member in config::expand_suite(p).map_err(|e| format!("{}: {e}", p.display()))? {
            let cfg = ExperimentConfig::from_path(&member).map_err(|e| format!("{}: {e}", member.display()))?;
            out.push((member, cfg));
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<12} {}", k.name(), k.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { configs } => match load(&configs) {
            Ok(list) => {
                for (p, c) in list {
                    println!("ok {} ({})", p.display(), c.experiment);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::Run {
            configs,
            seed,
            replicates,
            out,
            workers,
        } => {
            let mut list = match load(&configs) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            let many = list.len() > 1;
            for (path, cfg) in &mut list {
                if let Some(s) = seed {
                    cfg.master_seed = s;
                }
                if let Some(r) = replicates {
                    cfg.replicates = r;
                }
                if let Some(o) = &out {
                    cfg.output_dir = if many { o.join(cfg.label()) } else { o.clone() };
                }
                if let Err(e) = cfg.validate() {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(EXIT_USAGE);
                }
            }
            let mut all_pass = true;
            for (_, cfg) in &list {
                let w = workers.or(cfg.workers).unwrap_or_else(mc::default_workers);
                let outcome = match cli::run(cfg, w) {
                    Ok(o) => o,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_FAIL);
                    }
                };
                if let Err(e) = outcome.write(&cfg.output_dir) {
                    eprintln!("error: writing {}: {e}", cfg.output_dir.display());
                    return ExitCode::from(EXIT_USAGE);
                }
                let s = &outcome.summary;
                let failed = s.failures().count();
                println!(
                    "{} {:<12} {} verdicts, {} failed -> {}",
                    if s.pass { "PASS" } else { "FAIL" },
                    s.name,
                    s.verdicts.len(),
                    failed,
                    cfg.output_dir.display()
                );
                for f in s.failures() {
                    println!("  fail {} estimate={} target={} z={}", f.name, f.estimate, f.target, f.z);
                }
                all_pass &= s.pass;
            }
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
    }
}
