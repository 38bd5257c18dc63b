use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use brinkdarcy::harness::{
    self, parse_config, run_refinement, run_single_to, run_sweep, HarnessError, SimConfig, SweepOptions,
};

/// Two-species Brinkman/Darcy cross-diffusion simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config, the tensor and the initial data.
    Validate { config: PathBuf },
    /// Run one simulation.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Viscosity sweep against a Darcy reference.
    Sweep {
        config: PathBuf,
        /// Comma-separated positive viscosities.
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of equal time intervals for the time-integrated distances.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Run the Darcy reference on this many times more cells per axis.
        #[arg(long, default_value_t = 1)]
        reference_refinement: usize,
    },
    /// Grid-refinement study.
    Refine {
        config: PathBuf,
        /// Comma-separated cells per axis, each dividing the next.
        #[arg(long, value_delimiter = ',', required = true)]
        cells: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn load(path: &Path) -> Result<SimConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Validation)?;
    parse_config(&text).with_context(|| format!("in {}", path.display())).map_err(Failure::Validation)
}

fn out_dir(cfg: &SimConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.directory.clone())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let outcome = harness::validate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome).expect("serializable"));
            if !outcome.pass {
                return Err(Failure::Validation(anyhow::anyhow!("{} failed validation", config.display())));
            }
        }
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let dir = out_dir(&cfg, out);
            let run = run_single_to(&cfg, Some(&dir))?;
            println!(
                "t = {} after {} steps; entropy residual {:.3e}; max total density {:.6}; output in {}",
                run.state.t,
                run.steps,
                run.audit.residual,
                run.max_total,
                dir.display()
            );
        }
        Command::Sweep { config, nu, out, samples, reference_refinement } => {
            let cfg = load(&config)?;
            let dir = out_dir(&cfg, out);
            let opts = SweepOptions { samples, reference_refinement };
            let table = run_sweep(&cfg, &nu, &opts, Some(&dir))?;
            println!("{:>10} {:>14} {:>14} {:>14}", "nu", "|m-n|", "|n-n0|", "|Dm-Dn0|");
            for r in &table.rows {
                println!(
                    "{:>10.3e} {:>14.6e} {:>14.6e} {:>14.6e}",
                    r.nu, r.l2_m_minus_n, r.l2_n_minus_n0, r.l2_gradm_minus_gradn0
                );
            }
            if let Some(f) = table.fits.l2_m_minus_n {
                println!("slope of |m-n| in nu: {:.3} (r^2 {:.4})", f.slope, f.r_squared);
            }
            println!("output in {}", dir.display());
        }
        Command::Refine { config, cells, out } => {
            let cfg = load(&config)?;
            let dir = out_dir(&cfg, out);
            let report = run_refinement(&cfg, &cells, Some(&dir))?;
            println!("{:>6} {:>14} {:>14} {:>14}", "cells", "self_error", "residual", "overlap");
            for r in &report.rows {
                let e = r.self_error.map(|e| format!("{e:.6e}")).unwrap_or_else(|| "-".into());
                println!("{:>6} {:>14} {:>14.6e} {:>14.6e}", r.cells, e, r.audit_residual, r.overlap_final);
            }
            for (name, fit) in [
                ("self-convergence", report.self_error_fit),
                ("entropy residual", report.audit_residual_fit),
                ("overlap", report.overlap_fit),
            ] {
                if let Some(f) = fit {
                    println!("{name} order: {:.3}", f.slope);
                }
            }
            println!("output in {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
