//! The common driver loop: step a solver, record a trace row, test the
//! stopping rule.

use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error as ThisError;

use crate::linalg;
use crate::metrics::{Trace, TraceRow};
use crate::network::{consensus_violation, MixingMatrix};
use crate::problems::ProblemInstance;
use crate::solver_core::{build_dual_preconditioner, Iterate, MetricOperators, StepSizes};
use crate::Error;

/// Work performed so far, for the per-iteration cost contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub gossip_rounds: u64,
    pub gradient_calls: u64,
    pub prox_calls: u64,
}

/// What a solver reports about the iteration it just took.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub kkt_norm: Option<f64>,
    /// Tolerance the inexact prox had to meet.
    pub eps: Option<f64>,
    /// Largest certified prox residual over agents.
    pub cert: Option<f64>,
}

pub trait Solver {
    fn name(&self) -> &'static str;
    /// Advances one iteration.
    fn step(&mut self) -> Result<StepInfo, Error>;
    /// Per-agent copies `x₁ᵢ`.
    fn x1(&self) -> &[DVector<f64>];
    fn counters(&self) -> Counters;
    /// `wᵏ` in DISA coordinates, when the solver has one.
    fn point(&self) -> Option<Iterate> {
        None
    }
    /// `vᵏ = (x̄ᵏ, yᵏ)`, when the solver has one.
    fn half_point(&self) -> Option<Iterate> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// `‖x₁ᵏ − x₁*‖/‖x₁*‖ < tol`; needs a reference.
    RelativeError(f64),
    /// Norm of the KKT residual element below `tol`.
    KktNorm(f64),
    /// Run exactly `max_iters` iterations.
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub criterion: Criterion,
    pub max_iters: usize,
    /// Stop as soon as the divergence indicator fires.
    pub halt_on_divergence: bool,
}

impl StoppingRule {
    pub fn relative_error(tol: f64, max_iters: usize) -> Self {
        StoppingRule {
            criterion: Criterion::RelativeError(tol),
            max_iters,
            halt_on_divergence: true,
        }
    }

    pub fn kkt(tol: f64, max_iters: usize) -> Self {
        StoppingRule {
            criterion: Criterion::KktNorm(tol),
            max_iters,
            halt_on_divergence: true,
        }
    }

    pub fn max_iterations(max_iters: usize) -> Self {
        StoppingRule {
            criterion: Criterion::MaxIterations,
            max_iters,
            halt_on_divergence: false,
        }
    }
}

/// Known solution used for relative error and, with `w_star` and `metric`,
/// the `H`/`M` distance series.
#[derive(Debug, Clone)]
pub struct RunReference {
    pub x_star: DVector<f64>,
    pub w_star: Option<Iterate>,
    pub metric: Option<MetricOperators>,
}

impl RunReference {
    pub fn primal(x_star: DVector<f64>) -> Self {
        RunReference {
            x_star,
            w_star: None,
            metric: None,
        }
    }

    /// Reference with the `H`/`M` forms built for `steps`, so traces carry
    /// the `h_dist` and `m_step` series.
    pub fn with_metric(
        x_star: DVector<f64>,
        w_star: Iterate,
        problem: &ProblemInstance,
        w: &MixingMatrix,
        steps: &StepSizes,
    ) -> Result<Self, Error> {
        let u: Vec<_> = problem.agents.iter().map(|a| a.u.clone()).collect();
        let pc = build_dual_preconditioner(&u, steps)?;
        Ok(RunReference {
            x_star,
            w_star: Some(w_star),
            metric: Some(MetricOperators::new(problem, w, steps, &pc)),
        })
    }
}

#[derive(Debug, ThisError)]
pub enum RunError {
    #[error("iteration budget exhausted after {} iterations", .trace.iterations())]
    BudgetExceeded { trace: Trace },
    #[error("iterates diverged at iteration {}", .trace.meta.diverged_at.unwrap_or(0))]
    Diverged { trace: Trace },
    #[error(transparent)]
    Solver(#[from] Error),
}

impl RunError {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            RunError::BudgetExceeded { trace } | RunError::Diverged { trace } => Some(trace),
            RunError::Solver(_) => None,
        }
    }

    pub fn into_trace(self) -> Option<Trace> {
        match self {
            RunError::BudgetExceeded { trace } | RunError::Diverged { trace } => Some(trace),
            RunError::Solver(_) => None,
        }
    }
}

/// Iterates `solver` under `stop`, recording one row for the initial point
/// and one per iteration.
pub fn run(
    solver: &mut dyn Solver,
    problem: &ProblemInstance,
    w: &MixingMatrix,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    if matches!(stop.criterion, Criterion::RelativeError(_)) && reference.is_none() {
        return Err(Error::Invalid("relative-error stopping needs a reference solution".into()).into());
    }
    let start = Instant::now();
    let m = problem.agent_count();
    let x_star_blocks = reference.map(|r| vec![r.x_star.clone(); m]);
    let x_star_norm = x_star_blocks.as_deref().map(linalg::norm);
    // Divergence threshold: 10⁶·‖x⁰ − x*‖, or 10⁶·max(1, ‖x⁰‖) without a reference.
    let initial_gap = match &x_star_blocks {
        Some(xs) => linalg::norm(&linalg::sub(solver.x1(), xs)),
        None => linalg::norm(solver.x1()),
    };
    let blowup = 1e6 * initial_gap.max(if x_star_blocks.is_some() { f64::MIN_POSITIVE } else { 1.0 });

    let mut trace = Trace::new(solver.name());
    let h_dist = |pt: Option<Iterate>| -> Result<Option<f64>, Error> {
        match (reference, pt) {
            (Some(RunReference { w_star: Some(ws), metric: Some(ops), .. }), Some(p)) => {
                Ok(Some(ops.h_norm_sq(&p.sub(ws))?))
            }
            _ => Ok(None),
        }
    };
    let row = |k: usize, x1: &[DVector<f64>], h: Option<f64>, info: Option<StepInfo>, m_step: Option<f64>, ms: f64| -> Result<TraceRow, Error> {
        let re_err = match (&x_star_blocks, x_star_norm) {
            (Some(xs), Some(nrm)) if nrm > 0.0 => Some(linalg::norm(&linalg::sub(x1, xs)) / nrm),
            _ => None,
        };
        Ok(TraceRow {
            iter: k,
            re_err,
            consensus: consensus_violation(w, x1).unwrap_or(f64::NAN),
            kkt_norm: info.and_then(|i| i.kkt_norm),
            objective: problem.objective_blocks(x1),
            h_dist: h,
            m_step,
            eps: info.and_then(|i| i.eps),
            cert: info.and_then(|i| i.cert),
            ms,
        })
    };

    let mut last_point = solver.point();
    let h0 = h_dist(last_point.clone())?;
    trace.push(row(0, solver.x1(), h0, None, None, 0.0)?);

    let converged = |r: &TraceRow| match stop.criterion {
        Criterion::RelativeError(tol) => r.re_err.is_some_and(|e| e < tol),
        Criterion::KktNorm(tol) => r.kkt_norm.is_some_and(|e| e < tol),
        Criterion::MaxIterations => false,
    };
    if converged(trace.rows.last().expect("row 0 present")) {
        trace.meta.converged = true;
        trace.meta.counters = solver.counters();
        return Ok(trace);
    }

    for k in 1..=stop.max_iters {
        let info = solver.step()?;
        let point = solver.point();
        let m_step = match (reference.and_then(|r| r.metric.as_ref()), &last_point, solver.half_point()) {
            (Some(ops), Some(prev), Some(half)) if reference.is_some_and(|r| r.w_star.is_some()) => {
                Some(ops.m_norm_sq(&prev.sub(&half)).map_err(Error::from)?)
            }
            _ => None,
        };
        let h = h_dist(point.clone())?;
        let r = row(k, solver.x1(), h, Some(info), m_step, start.elapsed().as_secs_f64() * 1e3)?;
        let diverged = !linalg::all_finite(solver.x1())
            || match &x_star_blocks {
                Some(xs) => linalg::norm(&linalg::sub(solver.x1(), xs)) > blowup,
                None => linalg::norm(solver.x1()) > blowup,
            };
        let done = converged(&r);
        trace.push(r);
        last_point = point;
        if diverged && trace.meta.diverged_at.is_none() {
            trace.meta.diverged_at = Some(k);
        }
        if trace.meta.diverged_at.is_some() && (stop.halt_on_divergence || !linalg::all_finite(solver.x1())) {
            trace.meta.counters = solver.counters();
            return Err(RunError::Diverged { trace });
        }
        if done {
            trace.meta.converged = true;
            trace.meta.counters = solver.counters();
            return Ok(trace);
        }
    }
    trace.meta.counters = solver.counters();
    match stop.criterion {
        Criterion::MaxIterations => Ok(trace),
        _ => Err(RunError::BudgetExceeded { trace }),
    }
}
