//! Single runs: instance construction, solver dispatch and artifacts.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use disa_core::baselines::ReformulatedProblem;
use disa_core::prelude::*;
use disa_core::problems::{parse_libsvm, split_samples, synthetic_classification};
use disa_core::vdisa::Direction;
use serde::Serialize;

use crate::config::{
    ExperimentConfig, Policy, ProblemKind, RuleKind, ScheduleKind, SolverName, StrategyKind, TopologyKind,
};
use crate::plot::{emit_plot_data, PlotKind};
use crate::CliError;

/// Built instance plus everything derived from it before any solver runs.
pub struct Setup {
    pub problem: ProblemInstance,
    pub w: MixingMatrix,
    pub reference: ReferenceSolution,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<ProblemInstance, CliError> {
    let p = &cfg.problem;
    let inst = match p.kind {
        ProblemKind::Lasso => make_generalized_lasso_with(LassoSpec {
            m: p.m,
            n: p.n,
            u_rows: p.u_rows,
            seed: p.seed,
            u_scale: p.u_scale,
        }),
        ProblemKind::Logistic => {
            let (features, labels) = match &p.dataset {
                Some(path) => {
                    let file = File::open(path)
                        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
                    let mut data = parse_libsvm(BufReader::new(file)).map_err(|e| CliError::Config(e.to_string()))?;
                    data.truncate(p.samples);
                    data.dense()
                }
                None => synthetic_classification(p.samples, p.n, p.seed),
            };
            split_samples(&features, &labels, p.m, p.seed)
                .and_then(|parts| make_distributed_logistic(&parts, p.u_rows, p.seed, p.u_scale))
        }
    };
    inst.map_err(|e| CliError::Config(e.to_string()))
}

pub fn build_mixing(cfg: &ExperimentConfig) -> Result<MixingMatrix, CliError> {
    let t = &cfg.topology;
    let topology = match t.kind {
        TopologyKind::Line => Topology::Line,
        TopologyKind::Cycle => Topology::Cycle,
        TopologyKind::Star => Topology::Star,
        TopologyKind::Complete => Topology::Complete,
        TopologyKind::ErdosRenyi => Topology::ErdosRenyi {
            p: t.p.unwrap_or(0.5),
            seed: t.seed.unwrap_or(cfg.problem.seed),
        },
    };
    let g = build_graph(topology, cfg.problem.m).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(metropolis_weights(&g))
}

/// Builds the instance, rejects invalid DISA steps, then computes the
/// reference solution.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let problem = build_problem(cfg)?;
    let w = build_mixing(cfg)?;
    if matches!(cfg.solver.name, SolverName::Disa | SolverName::Vdisa) {
        disa_steps(cfg, &problem)?;
        schedule(cfg)?;
    }
    let reference = reference_solution(&problem, &w, ReferenceOptions::default()).map_err(CliError::Runtime)?;
    Ok(Setup { problem, w, reference })
}

/// Condat-Vu and L-ALM defaults: `τ = min 1/L_i − 10⁻⁴` and `τβ = 0.01`.
pub fn baseline_defaults(l: &[f64]) -> (f64, f64) {
    let t = l.iter().map(|li| 1.0 / li).fold(f64::INFINITY, f64::min);
    let tau = if t > 2e-4 { t - 1e-4 } else { 0.5 * t };
    (tau, 0.01 / tau)
}

/// DISA / V-DISA step sizes from the solver section.
pub fn disa_steps(cfg: &ExperimentConfig, problem: &ProblemInstance) -> Result<StepSizes, CliError> {
    let l = problem.lipschitz();
    let s = &cfg.solver;
    let steps = match s.tau {
        Some(tau) => {
            let beta = s.beta.or(s.tau_beta.map(|tb| tb / tau)).unwrap_or(0.5 / tau);
            validate_step_sizes(&l, &vec![tau; l.len()], beta)
        }
        None => {
            let policy = match s.policy.unwrap_or(match cfg.problem.kind {
                ProblemKind::Lasso => Policy::LassoDefault,
                ProblemKind::Logistic => Policy::LogisticDefault,
            }) {
                Policy::LassoDefault => StepPolicy::LassoDefault,
                Policy::LogisticDefault => StepPolicy::LogisticDefault,
            };
            default_step_sizes(&l, policy)
        }
    };
    steps.map_err(|e| CliError::Config(e.to_string()))
}

fn baseline_steps(cfg: &ExperimentConfig, problem: &ProblemInstance) -> (f64, f64) {
    let (tau0, _) = baseline_defaults(&problem.lipschitz());
    let s = &cfg.solver;
    let tau = s.tau.unwrap_or(tau0);
    let beta = s.beta.unwrap_or(s.tau_beta.unwrap_or(0.01) / tau);
    (tau, beta)
}

fn schedule(cfg: &ExperimentConfig) -> Result<EpsilonSchedule, CliError> {
    let v = &cfg.vdisa;
    let s = match v.schedule {
        ScheduleKind::Exact => Ok(EpsilonSchedule::Exact),
        ScheduleKind::Power => EpsilonSchedule::power(v.eps0, v.r),
        ScheduleKind::Geometric => EpsilonSchedule::geometric(v.r),
    };
    s.map_err(|e| CliError::Config(e.to_string()))
}

fn strategy(cfg: &ExperimentConfig) -> InexactProxStrategy {
    match cfg.vdisa.strategy {
        StrategyKind::Exact => InexactProxStrategy::Exact,
        StrategyKind::Iterative => InexactProxStrategy::Iterative,
        StrategyKind::Adversarial => InexactProxStrategy::Injected(Direction::Adversarial),
        StrategyKind::Random => InexactProxStrategy::Injected(Direction::Random { seed: cfg.vdisa.seed }),
    }
}

pub fn stopping_rule(cfg: &ExperimentConfig) -> StoppingRule {
    let s = &cfg.stopping;
    match s.rule {
        RuleKind::ReErr => StoppingRule::relative_error(s.tol, s.max_iters),
        RuleKind::Kkt => StoppingRule::kkt(s.tol, s.max_iters),
        RuleKind::MaxIters => StoppingRule::max_iterations(s.max_iters),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// Ran the full iteration count under the `max_iters` rule.
    Completed,
    Budget,
    Diverged,
}

/// Step sizes as actually used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsedSteps {
    pub tau: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub status: Status,
    pub steps: UsedSteps,
    pub wallclock_ms: f64,
}

/// Runs the configured solver on a prepared instance. Step-size problems
/// surface as [`CliError::Config`] before the first iteration.
pub fn execute(cfg: &ExperimentConfig, setup: &Setup) -> Result<RunOutcome, CliError> {
    let Setup { problem, w, reference } = setup;
    let stop = stopping_rule(cfg);
    let rref = RunReference::primal(reference.x_star.clone());
    let start = Instant::now();
    let (result, steps) = match cfg.solver.name {
        SolverName::Disa => {
            let steps = disa_steps(cfg, problem)?;
            let used = UsedSteps { tau: steps.tau().to_vec(), beta: steps.beta() };
            let mut e = DisaEngine::new(problem, w, steps).map_err(pre_compute)?;
            (disa_run(&mut e, &stop, Some(&rref)), used)
        }
        SolverName::Vdisa => {
            let steps = disa_steps(cfg, problem)?;
            let used = UsedSteps { tau: steps.tau().to_vec(), beta: steps.beta() };
            let mut e =
                VdisaEngine::new(problem, w, steps, schedule(cfg)?, strategy(cfg)).map_err(pre_compute)?;
            (vdisa_run(&mut e, &stop, Some(&rref)), used)
        }
        SolverName::CondatVu => {
            let (tau, beta) = baseline_steps(cfg, problem);
            let rp = ReformulatedProblem::new(problem, w).map_err(pre_compute)?;
            let used = UsedSteps { tau: vec![tau; problem.agent_count()], beta };
            (condat_vu_run(&rp, tau, beta, &stop, Some(&rref)), used)
        }
        SolverName::Lalm => {
            let (tau, beta) = baseline_steps(cfg, problem);
            let used = UsedSteps { tau: vec![tau; problem.agent_count()], beta };
            (lalm_run(problem, w, tau, beta, &stop, Some(&rref)), used)
        }
        SolverName::Nids => {
            let l = problem.lipschitz();
            let tau = cfg.solver.tau.unwrap_or(l.iter().map(|li| 1.0 / li).fold(f64::INFINITY, f64::min));
            let used = UsedSteps { tau: vec![tau; problem.agent_count()], beta: 1.0 / tau };
            (nids_reference_run(problem, w, tau, &stop, Some(&rref)), used)
        }
    };
    let wallclock_ms = start.elapsed().as_secs_f64() * 1e3;
    let (trace, status) = match result {
        Ok(t) if t.meta.converged => (t, Status::Converged),
        Ok(t) => (t, Status::Completed),
        Err(RunError::BudgetExceeded { trace }) => (trace, Status::Budget),
        Err(RunError::Diverged { trace }) => (trace, Status::Diverged),
        Err(RunError::Solver(e)) => return Err(CliError::Runtime(e)),
    };
    let mut trace = trace;
    trace.meta.config_hash = Some(cfg.hash());
    trace.meta.seed = Some(cfg.problem.seed);
    Ok(RunOutcome {
        trace,
        status,
        steps,
        wallclock_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub re_err: Option<f64>,
    pub kkt_norm: Option<f64>,
    pub consensus: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub solver: String,
    pub status: Status,
    pub converged: bool,
    /// Set when the run stopped early on budget or divergence.
    pub partial: bool,
    pub iterations: usize,
    pub wallclock_ms: f64,
    pub config_hash: String,
    pub seed: u64,
    pub problem: String,
    pub agents: usize,
    pub primal_dim: usize,
    pub u_scale: f64,
    pub max_uut_norm: f64,
    pub steps: UsedSteps,
    pub diverged_at: Option<usize>,
    pub reference_iterations: usize,
    pub reference_certificate: f64,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub gossip_rounds: u64,
    pub gradient_calls: u64,
    pub prox_calls: u64,
}

pub fn summarize(cfg: &ExperimentConfig, setup: &Setup, out: &RunOutcome) -> Summary {
    let last = out.trace.last().copied().unwrap_or_default();
    let c = out.trace.meta.counters;
    Summary {
        solver: out.trace.meta.solver.clone(),
        status: out.status,
        converged: out.status == Status::Converged,
        partial: matches!(out.status, Status::Budget | Status::Diverged),
        iterations: out.trace.iterations(),
        wallclock_ms: out.wallclock_ms,
        config_hash: cfg.hash(),
        seed: cfg.problem.seed,
        problem: setup.problem.meta.name.clone(),
        agents: setup.problem.agent_count(),
        primal_dim: setup.problem.primal_dim,
        u_scale: cfg.problem.u_scale,
        max_uut_norm: setup.problem.max_uut_norm(),
        steps: out.steps.clone(),
        diverged_at: out.trace.meta.diverged_at,
        reference_iterations: setup.reference.iterations,
        reference_certificate: setup.reference.certificate,
        final_metrics: FinalMetrics {
            re_err: last.re_err,
            kkt_norm: last.kkt_norm,
            consensus: last.consensus,
            objective: last.objective,
        },
        gossip_rounds: c.gossip_rounds,
        gradient_calls: c.gradient_calls,
        prox_calls: c.prox_calls,
    }
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `trace.csv`, `summary.json`, `plot_iter.csv`, `plot_time.csv` and
/// `config.toml` under `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, summary: &Summary, trace: &Trace) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("trace.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    trace.write_csv(file).map_err(|e| CliError::Io(e.to_string()))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_text(&dir.join("summary.json"), &(json + "\n"))?;
    let traces = std::slice::from_ref(trace);
    write_text(&dir.join("plot_iter.csv"), &emit_plot_data(traces, PlotKind::Iter)?)?;
    write_text(&dir.join("plot_time.csv"), &emit_plot_data(traces, PlotKind::Time)?)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())
}

/// Builds the instance, runs the configured solver and persists artifacts to
/// `cfg.output.dir`. Budget exhaustion and divergence still write artifacts
/// (flagged `partial`) and are reported through the returned summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    cfg.validate()?;
    let setup = prepare(cfg)?;
    let out = execute(cfg, &setup)?;
    let summary = summarize(cfg, &setup, &out);
    write_artifacts(&cfg.output.dir, cfg, &summary, &out.trace)?;
    Ok(summary)
}

impl Summary {
    /// Process exit status for this outcome.
    pub fn exit_code(&self, expect_convergence: bool) -> i32 {
        match (self.status, expect_convergence) {
            (Status::Diverged, true) => 3,
            (Status::Budget, true) => 4,
            _ => 0,
        }
    }
}

/// Failures raised while constructing a solver happen before any compute.
fn pre_compute(e: disa_core::Error) -> CliError {
    CliError::Config(e.to_string())
}
