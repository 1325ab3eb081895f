//! Convergence diagnostics and the traces that carry them.
//!
//! Checks here are pure functions of a [`Trace`], so they can be replayed
//! from a persisted CSV.

use std::io::{Read, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{self, Blocks};
use crate::network::{laplacian_form, MixingMatrix};
use crate::problems::ProblemInstance;
use crate::run::Counters;
use crate::solver_core::{Iterate, MetricOperators, StepSizes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference point has zero norm")]
    ZeroReference,
    #[error("trace has no `{0}` series")]
    MissingSeries(&'static str),
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series must be positive and finite")]
    NonPositive,
    #[error("gap bound only holds when every tau_i < 1/L_i")]
    StrictRegimeRequired,
    #[error("csv: {0}")]
    Csv(String),
}

pub const CSV_HEADER: [&str; 9] = [
    "iter", "re_err", "consensus", "kkt_norm", "objective", "h_dist", "m_step", "eps", "ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceRow {
    pub iter: usize,
    pub re_err: Option<f64>,
    pub consensus: f64,
    pub kkt_norm: Option<f64>,
    pub objective: f64,
    /// `‖wᵏ − w*‖²_H`.
    pub h_dist: Option<f64>,
    /// `‖w^{k−1} − vᵏ‖²_M`.
    pub m_step: Option<f64>,
    pub eps: Option<f64>,
    /// Largest certified prox residual; kept in memory only.
    pub cert: Option<f64>,
    /// Wallclock since the run started.
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    pub solver: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub converged: bool,
    /// First iteration at which the divergence indicator fired.
    pub diverged_at: Option<usize>,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    pub fn new(solver: &str) -> Self {
        Trace {
            rows: Vec::new(),
            meta: TraceMeta {
                solver: solver.to_string(),
                ..TraceMeta::default()
            },
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iter < row.iter));
        self.rows.push(row);
    }

    /// Iterations taken, not counting the initial row.
    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iter)
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn re_err_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.re_err).collect()
    }

    pub fn h_dist_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.h_dist).collect()
    }

    /// `‖wᵏ − v^{k+1}‖²_M` for `k = 0, 1, ...`.
    pub fn m_step_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().skip(1).map(|r| r.m_step).collect()
    }

    pub fn kkt_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().skip(1).map(|r| r.kkt_norm).collect()
    }

    /// Writes the fixed-column CSV; unavailable values are empty fields.
    pub fn write_csv(&self, out: impl Write) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| MetricsError::Csv(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                opt(r.re_err),
                r.consensus.to_string(),
                opt(r.kkt_norm),
                r.objective.to_string(),
                opt(r.h_dist),
                opt(r.m_step),
                opt(r.eps),
                format!("{:.3}", r.ms),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
    }

    pub fn read_csv(input: impl Read, solver: &str) -> Result<Trace, MetricsError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| MetricsError::Csv(e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(MetricsError::Csv(format!("unexpected header {header:?}")));
        }
        let mut trace = Trace::new(solver);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
            let num = |i: usize| -> Result<Option<f64>, MetricsError> {
                let s = &rec[i];
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| MetricsError::Csv(format!("bad number `{s}`")))
                }
            };
            let iter = rec[0].parse().map_err(|_| MetricsError::Csv(format!("bad iter `{}`", &rec[0])))?;
            trace.push(TraceRow {
                iter,
                re_err: num(1)?,
                consensus: num(2)?.unwrap_or(f64::NAN),
                kkt_norm: num(3)?,
                objective: num(4)?.unwrap_or(f64::NAN),
                h_dist: num(5)?,
                m_step: num(6)?,
                eps: num(7)?,
                cert: None,
                ms: num(8)?.unwrap_or(0.0),
            });
        }
        Ok(trace)
    }
}

/// `‖x₁ − x₁*‖ / ‖x₁*‖`.
pub fn relative_error(x1: &[DVector<f64>], x1_star: &[DVector<f64>]) -> Result<f64, MetricsError> {
    let denom = linalg::norm(x1_star);
    if denom == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok(linalg::norm(&linalg::sub(x1, x1_star)) / denom)
}

/// An explicit element of the KKT mapping at `v^{k+1}`.
///
/// The `y₁` part of `r_y` is `−√V x̄₁`; only its squared norm
/// `½x̄₁ᵀ((I − W)⊗I)x̄₁` is kept so that `√V` is never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct KktElement {
    pub r_x1: Blocks,
    pub r_x2: Blocks,
    pub r_y1_norm_sq: f64,
    /// `−(U_i x̄₁ᵢ − x̄₂ᵢ)`.
    pub r_y2: Blocks,
}

impl KktElement {
    pub fn norm(&self) -> f64 {
        (linalg::norm_sq(&self.r_x1) + linalg::norm_sq(&self.r_x2) + self.r_y1_norm_sq + linalg::norm_sq(&self.r_y2))
            .sqrt()
    }
}

/// Inputs to [`kkt_element`] describing one iteration `wᵏ → (x̄^{k+1}, y^{k+1})`.
pub struct KktInputs<'a> {
    pub before: &'a Iterate,
    /// `∇f_i(x₁ᵢᵏ)`, already computed by the solver.
    pub grad_before: &'a [DVector<f64>],
    pub xbar1: &'a [DVector<f64>],
    pub xbar2: &'a [DVector<f64>],
    pub y1t_next: &'a [DVector<f64>],
    pub y2_next: &'a [DVector<f64>],
    /// Prox error `dᵏ` of an inexact step.
    pub d: Option<&'a [DVector<f64>]>,
}

/// `r_x = ∇F(x̄) − ∇F(x) + BᵀΔy − Γ⁻¹(x̄ − x) (+ d)`, `r_y = −QΔy = −Bx̄`.
pub fn kkt_element(problem: &ProblemInstance, w: &MixingMatrix, steps: &StepSizes, k: &KktInputs<'_>) -> KktElement {
    let m = problem.agent_count();
    let mut r_x1 = Vec::with_capacity(m);
    let mut r_x2 = Vec::with_capacity(m);
    let mut r_y2 = Vec::with_capacity(m);
    for i in 0..m {
        let a = &problem.agents[i];
        let tau = steps.tau()[i];
        let dy1 = &k.y1t_next[i] - &k.before.y1t[i];
        let dy2 = &k.y2_next[i] - &k.before.y2[i];
        let gbar = a.f.gradient(&k.xbar1[i]);
        r_x1.push(gbar - &k.grad_before[i] + dy1 + a.u.tr_mul(&dy2) - (&k.xbar1[i] - &k.before.x1[i]) / tau);
        let mut rx2 = -dy2 - (&k.xbar2[i] - &k.before.x2[i]) / tau;
        if let Some(d) = k.d {
            rx2 += &d[i];
        }
        r_x2.push(rx2);
        r_y2.push(-(&a.u * &k.xbar1[i] - &k.xbar2[i]));
    }
    let r_y1_norm_sq = 0.5 * laplacian_form(w, k.xbar1).unwrap_or(f64::NAN).max(0.0);
    KktElement {
        r_x1,
        r_x2,
        r_y1_norm_sq,
        r_y2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FejerReport {
    pub max_increment: f64,
    pub pass: bool,
}

/// Largest one-step increase of `‖wᵏ − w*‖²_H`; passes when it is at most
/// `1e-9·h_dist(0)`.
pub fn fejer_check(trace: &Trace) -> Result<FejerReport, MetricsError> {
    let h = trace.h_dist_series().ok_or(MetricsError::MissingSeries("h_dist"))?;
    if h.is_empty() {
        return Err(MetricsError::MissingSeries("h_dist"));
    }
    let max_increment = h.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    Ok(FejerReport {
        max_increment,
        pass: max_increment <= 1e-9 * h[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialSumReport {
    /// `min_K (‖w⁰ − w*‖²_H − Σ_{k<K} ‖wᵏ − v^{k+1}‖²_M)`.
    pub slack: f64,
    pub pass: bool,
}

pub fn partial_sum_check(trace: &Trace, h0: f64) -> Result<PartialSumReport, MetricsError> {
    let m = trace.m_step_series().ok_or(MetricsError::MissingSeries("m_step"))?;
    let mut sum = 0.0;
    let mut slack = h0;
    for v in m {
        sum += v;
        slack = slack.min(h0 - sum);
    }
    Ok(PartialSumReport {
        slack,
        pass: slack >= -1e-9 * h0,
    })
}

/// `F(x₁) + G(x₂) + ⟨ỹ₁, x₁⟩ + ⟨y₂, Ux₁ − x₂⟩`.
pub fn lagrangian(problem: &ProblemInstance, x1: &[DVector<f64>], x2: &[DVector<f64>], y1t: &[DVector<f64>], y2: &[DVector<f64>]) -> f64 {
    problem
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.f.value(&x1[i]) + a.g.value(&x2[i]) + y1t[i].dot(&x1[i]) + y2[i].dot(&(&a.u * &x1[i] - &x2[i]))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapProbe {
    pub gap: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks `L(X^K, y) − L(x*, Y^K) ≤ ‖w⁰ − (x*, y)‖²_H / (2K) + 1e-8` at each
/// dual probe `y`, where `X^K` averages `x̄¹..x̄ᴷ` and `Y^K` averages `y¹..yᴷ`.
#[allow(clippy::too_many_arguments)]
pub fn primal_dual_gap_bound_check(
    problem: &ProblemInstance,
    steps: &StepSizes,
    ops: &MetricOperators,
    averaged: &Iterate,
    x_star: &Iterate,
    w0: &Iterate,
    probes: &[(Blocks, Blocks)],
    k: usize,
) -> Result<Vec<GapProbe>, MetricsError> {
    if !steps.strict() {
        return Err(MetricsError::StrictRegimeRequired);
    }
    let mut out = Vec::with_capacity(probes.len());
    for (y1t, y2) in probes {
        let gap = lagrangian(problem, &averaged.x1, &averaged.x2, y1t, y2)
            - lagrangian(problem, &x_star.x1, &x_star.x2, &averaged.y1t, &averaged.y2);
        let target = x_star.with_dual(y1t.clone(), y2.clone());
        let h = ops.h_norm_sq(&w0.sub(&target)).map_err(|_| MetricsError::NonPositive)?;
        let bound = h / (2.0 * k as f64);
        out.push(GapProbe {
            gap,
            bound,
            pass: gap <= bound + 1e-8,
        });
    }
    Ok(out)
}

/// `K·‖((I − W)⊗I)^{1/2} X₁ᴷ‖` for the running average `X₁ᴷ`.
pub fn scaled_consensus(w: &MixingMatrix, averaged_x1: &[DVector<f64>], k: usize) -> f64 {
    laplacian_form(w, averaged_x1).unwrap_or(f64::NAN).max(0.0).sqrt() * k as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    /// `exp(slope)` of `ln(residual)` against iteration.
    pub rate: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln(residual_k)` on `k` over the final
/// `tail_fraction` of the series.
pub fn tail_linear_fit(residuals: &[f64], tail_fraction: f64) -> Result<LinearFit, MetricsError> {
    if residuals.len() < 50 {
        return Err(MetricsError::TooShort {
            needed: 50,
            got: residuals.len(),
        });
    }
    let start = ((1.0 - tail_fraction.clamp(0.0, 1.0)) * residuals.len() as f64).floor() as usize;
    let tail = &residuals[start.min(residuals.len() - 2)..];
    if tail.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(MetricsError::NonPositive);
    }
    let n = tail.len() as f64;
    let xs: Vec<f64> = (0..tail.len()).map(|i| (start + i) as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LinearFit {
        rate: slope.exp(),
        r_squared,
    })
}
