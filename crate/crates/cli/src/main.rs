use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use disa_cli::config::{ExperimentConfig, SolverName};
use disa_cli::experiment::run_experiment;
use disa_cli::sweep::{run_sweep, SweepOutcome};
use disa_cli::CliError;

/// Run distributed-optimization experiments from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "disa", version)]
struct Args {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Override `solver.name`.
    #[arg(long, value_enum)]
    solver: Option<SolverName>,
    /// Override `problem.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `stopping.max_iters`.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Override `stopping.tol`.
    #[arg(long)]
    tol: Option<f64>,
    /// Override `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated `u_scale` values; runs a sweep instead of a single experiment.
    #[arg(long, value_delimiter = ',')]
    sweep_scales: Option<Vec<f64>>,
}

fn apply(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.solver {
        cfg.solver.name = s;
        cfg.sweep.solvers = vec![s];
    }
    if let Some(seed) = args.seed {
        cfg.problem.seed = seed;
    }
    if let Some(k) = args.max_iters {
        cfg.stopping.max_iters = k;
    }
    if let Some(tol) = args.tol {
        cfg.stopping.tol = tol;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(scales) = &args.sweep_scales {
        cfg.sweep.scales = scales.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main_inner(args: &Args) -> Result<i32, CliError> {
    let cfg = apply(args)?;
    let expect = cfg.stopping.expect_convergence;
    let summary = if cfg.sweep.scales.is_empty() {
        run_experiment(&cfg)?
    } else {
        match run_sweep(&cfg, &cfg.sweep.scales)? {
            SweepOutcome::Single(s) => s,
            SweepOutcome::Table(t) => {
                print!("{}", t.render());
                return Ok(0);
            }
        }
    };
    println!(
        "{}: {} after {} iterations ({:.1} ms), re_err {}",
        summary.solver,
        serde_json::to_string(&summary.status).unwrap_or_default().trim_matches('"'),
        summary.iterations,
        summary.wallclock_ms,
        summary.final_metrics.re_err.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "n/a".into()),
    );
    Ok(summary.exit_code(expect))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("disa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
