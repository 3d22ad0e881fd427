//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on errors (bad config, I/O, solver failure),
//! 2 when the run finished but flagged a broken invariant.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use turnpike_lab::config::parse_config;
use turnpike_lab::runner::{run_experiment, run_oracle};

#[derive(Parser)]
#[command(name = "turnpike-lab", version, about = "long-horizon tracking experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (default: config value, else `<config stem>-out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the horizon sweep (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a configuration without running anything.
    Validate { config: PathBuf },
    /// Cross-check the solver against exhaustive search on a downscaled
    /// version of the configured problem.
    Oracle {
        config: PathBuf,
        /// Requested control-grid levels per component (capped to keep the
        /// search affordable).
        #[arg(long, default_value_t = 5)]
        levels: usize,
    },
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("TURNPIKE_LAB_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();
    std::process::exit(real_main());
}

fn load(path: &Path) -> anyhow::Result<turnpike_lab::config::ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    parse_config(&text)
}

fn real_main() -> i32 {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            jobs,
            seed,
        } => {
            let cfg = match load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            };
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| default_out_dir(&config));
            match run_experiment(&cfg, &out_dir, jobs, seed) {
                Ok(outcome) => {
                    println!("artifacts written to {}", outcome.out_dir.display());
                    if outcome.violations.is_empty() {
                        0
                    } else {
                        for v in &outcome.violations {
                            eprintln!("violation: {v}");
                        }
                        2
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Cmd::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!(
                    "ok: {}",
                    cfg.name.as_deref().unwrap_or("unnamed experiment")
                );
                0
            }
            Err(e) => fail(&e),
        },
        Cmd::Oracle { config, levels } => {
            let cfg = match load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            };
            match run_oracle(&cfg, levels) {
                Ok(out) => {
                    println!(
                        "solver value {:.12e}, grid value {:.12e} ({} levels, {:.0} grid points)",
                        out.solver_value, out.grid_value, out.levels, out.grid_points
                    );
                    if out.solver_value <= out.grid_value + 1e-9 {
                        println!("solver dominates the control grid");
                        0
                    } else {
                        eprintln!(
                            "violation: solver value exceeds the grid optimum by {:.3e}",
                            out.solver_value - out.grid_value
                        );
                        2
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}

fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".to_string());
    PathBuf::from(format!("{stem}-out"))
}

fn fail(e: &anyhow::Error) -> i32 {
    eprintln!("error: {e:#}");
    1
}
