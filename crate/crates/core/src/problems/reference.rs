//! High-accuracy solutions used as ground truth by the diagnostics.

use nalgebra::DVector;

use crate::disa::DisaEngine;
use crate::network::MixingMatrix;
use crate::solver_core::{validate_step_sizes, Iterate};
use crate::Error;

use super::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    /// KKT residual target, relative to `1 + ‖∇F(0)‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            tol: 1e-12,
            max_iters: 500_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    /// Agent average of the final `x₁`.
    pub x_star: DVector<f64>,
    pub objective_star: f64,
    /// KKT residual norm at the final iteration.
    pub certificate: f64,
    /// Full primal-dual point, usable as `w*`.
    pub w_star: Iterate,
    pub iterations: usize,
}

/// Runs DISA with `τ_i = 1/L_i`, `β = 0.5/max τ` until the KKT residual
/// element drops below `tol·(1 + ‖∇F(0)‖)`.
pub fn reference_solution(
    inst: &ProblemInstance,
    w: &MixingMatrix,
    opts: ReferenceOptions,
) -> Result<ReferenceSolution, Error> {
    let l = inst.lipschitz();
    let tau: Vec<f64> = l.iter().map(|li| 1.0 / li).collect();
    let tau_max = tau.iter().copied().fold(0.0, f64::max);
    let steps = validate_step_sizes(&l, &tau, 0.5 / tau_max)?;
    let scale = 1.0
        + inst
            .agents
            .iter()
            .map(|a| a.f.gradient(&DVector::zeros(inst.primal_dim)).norm_squared())
            .sum::<f64>()
            .sqrt();
    let target = opts.tol * scale;
    let mut engine = DisaEngine::new(inst, w, steps)?;
    let mut certificate = f64::INFINITY;
    for k in 1..=opts.max_iters {
        let info = engine.disa_iterate()?;
        certificate = info.kkt_norm.unwrap_or(f64::INFINITY);
        if !certificate.is_finite() {
            break;
        }
        if certificate < target {
            let x1 = &engine.state.x1;
            let x_star = x1.iter().fold(DVector::zeros(inst.primal_dim), |a, b| a + b) / x1.len() as f64;
            return Ok(ReferenceSolution {
                objective_star: inst.objective(&x_star),
                x_star,
                certificate,
                w_star: engine.state.point(),
                iterations: k,
            });
        }
    }
    Err(Error::BudgetExceeded {
        iterations: opts.max_iters,
        residual: certificate,
    })
}
