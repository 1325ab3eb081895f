//! Iteration counts across `u_scale`, one instance per scale.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{ExperimentConfig, SolverName};
use crate::experiment::{execute, io_err, prepare, run_experiment, write_text, Status, Summary};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub u_scale: f64,
    /// Largest `‖U_iU_iᵀ‖` of the generated instance; NaN when it failed to build.
    pub max_uut_norm: f64,
    pub solver: String,
    pub status: Option<Status>,
    pub iterations: Option<usize>,
    pub wallclock_ms: f64,
    pub final_re_err: Option<f64>,
    /// `‖x̄ − x*‖` at the probe iteration, or at the last row if the run stopped earlier.
    pub abs_err_at_probe: Option<f64>,
    pub error: Option<String>,
}

impl SweepCell {
    /// Iteration count, `>budget`, `diverged` or `failed`.
    pub fn label(&self) -> String {
        match (self.status, self.iterations) {
            (Some(Status::Converged | Status::Completed), Some(k)) => k.to_string(),
            (Some(Status::Budget), _) => ">budget".into(),
            (Some(Status::Diverged), _) => "diverged".into(),
            _ => "failed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub probe_iter: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn column(&self, solver: SolverName) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.solver == solver.as_str()).collect()
    }

    /// Text table: one row per scale, one column per solver.
    pub fn render(&self) -> String {
        let mut solvers: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !solvers.contains(&c.solver.as_str()) {
                solvers.push(&c.solver);
            }
        }
        let mut out = format!("{:>10} {:>12}", "u_scale", "max|UU'|");
        for s in &solvers {
            out += &format!(" {s:>12}");
        }
        out.push('\n');
        let mut scales: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !scales.contains(&c.u_scale) {
                scales.push(c.u_scale);
            }
        }
        for sc in scales {
            let row: Vec<&SweepCell> = self.cells.iter().filter(|c| c.u_scale == sc).collect();
            out += &format!("{:>10.3e} {:>12.3e}", sc, row[0].max_uut_norm);
            for s in &solvers {
                let label = row.iter().find(|c| c.solver == *s).map(|c| c.label()).unwrap_or_default();
                out += &format!(" {label:>12}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every solver in `cfg.sweep.solvers` at each scale with default step
/// sizes. A failing cell is recorded and the sweep moves on.
pub fn sweep_u_scale(cfg: &ExperimentConfig, scales: &[f64]) -> Result<SweepTable, CliError> {
    if scales.is_empty() {
        return Err(CliError::Config("sweep needs at least one scale".into()));
    }
    let mut cells = Vec::new();
    for &scale in scales {
        let mut base = cfg.clone();
        base.problem.u_scale = scale;
        base.solver.tau = None;
        base.solver.beta = None;
        base.solver.tau_beta = None;
        base.validate()?;
        let setup = prepare(&base);
        for &solver in &cfg.sweep.solvers {
            let mut c = base.clone();
            c.solver.name = solver;
            let mut cell = SweepCell {
                u_scale: scale,
                max_uut_norm: f64::NAN,
                solver: solver.as_str().into(),
                status: None,
                iterations: None,
                wallclock_ms: 0.0,
                final_re_err: None,
                abs_err_at_probe: None,
                error: None,
            };
            let setup = match &setup {
                Ok(s) => s,
                Err(e) => {
                    cell.error = Some(e.to_string());
                    cells.push(cell);
                    continue;
                }
            };
            cell.max_uut_norm = setup.problem.max_uut_norm();
            match execute(&c, setup) {
                Ok(out) => {
                    let x_norm = setup.reference.x_star.norm();
                    let probe = out.trace.rows.get(cfg.sweep.probe_iter).or(out.trace.last());
                    cell.status = Some(out.status);
                    cell.iterations = Some(out.trace.iterations());
                    cell.wallclock_ms = out.wallclock_ms;
                    cell.final_re_err = out.trace.last().and_then(|r| r.re_err);
                    cell.abs_err_at_probe = probe.and_then(|r| r.re_err).map(|e| e * x_norm);
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cells.push(cell);
        }
    }
    Ok(SweepTable {
        probe_iter: cfg.sweep.probe_iter,
        cells,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `sweep.csv` (the table) and `sweep_error.csv` (error at the probe
/// iteration versus scale) under `dir`.
pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["u_scale", "max_uut_norm", "solver", "result", "iterations", "final_re_err", "ms"])
        .map_err(csv_err)?;
    for c in &table.cells {
        w.write_record([
            c.u_scale.to_string(),
            c.max_uut_norm.to_string(),
            c.solver.clone(),
            c.label(),
            opt(c.iterations),
            opt(c.final_re_err),
            c.wallclock_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("utf-8");
    write_text(&dir.join("sweep.csv"), &text)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["solver", "u_scale", "abs_err"]).map_err(csv_err)?;
    for c in &table.cells {
        w.write_record([c.solver.clone(), c.u_scale.to_string(), opt(c.abs_err_at_probe)])
            .map_err(csv_err)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("utf-8");
    write_text(&dir.join("sweep_error.csv"), &text)
}

pub enum SweepOutcome {
    Single(Summary),
    Table(SweepTable),
}

/// A single scale with a single solver is an ordinary experiment; anything
/// larger is a sweep whose table is written to the output directory.
pub fn run_sweep(cfg: &ExperimentConfig, scales: &[f64]) -> Result<SweepOutcome, CliError> {
    if let ([scale], [solver]) = (scales, cfg.sweep.solvers.as_slice()) {
        let mut c = cfg.clone();
        c.problem.u_scale = *scale;
        c.solver.name = *solver;
        return run_experiment(&c).map(SweepOutcome::Single);
    }
    let table = sweep_u_scale(cfg, scales)?;
    write_sweep(&cfg.output.dir, &table)?;
    Ok(SweepOutcome::Table(table))
}
