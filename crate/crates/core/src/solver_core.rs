//! Step sizes, the dual preconditioner and the metrics every solver shares.
//!
//! The stacked primal variable is `x = (x₁, x₂)` with `x₁ ∈ R^{mn}` the
//! agents' copies of the decision variable and `x₂ ∈ R^{mp}` the copies of
//! `U_i x₁ᵢ`. The dual `y = (y₁, y₂)` is stored with `ỹ₁ = √V y₁` in place of
//! `y₁`, where `V = ½(I − W) ⊗ I_n`, so no agent ever needs `√V`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::linalg::{self, Blocks};
use crate::network::MixingMatrix;
use crate::problems::ProblemInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("agent {agent}: {detail}")]
    StepSizeViolation { agent: usize, detail: String },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("expected {expected} step sizes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("agent {0}: dual preconditioner is not positive definite")]
    FactorizationFailure(usize),
    #[error("quadratic form evaluated to {0}, below zero")]
    NegativeForm(f64),
}

/// Per-agent primal steps `τ_i` and the shared dual step `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    tau: Vec<f64>,
    beta: f64,
    tau_max: f64,
    strict: bool,
}

impl StepSizes {
    /// Builds step sizes without checking them against any Lipschitz bound.
    /// Intended for equivalence experiments that deliberately sit on the
    /// boundary of the admissible region.
    pub fn unchecked(tau: Vec<f64>, beta: f64) -> Self {
        let tau_max = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        StepSizes {
            tau,
            beta,
            tau_max,
            strict: false,
        }
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// All `τ_i < 1/L_i`.
    pub fn strict(&self) -> bool {
        self.strict
    }
}

/// Accepts iff `0 < τ_i < 2/L_i` and `τ_i·β < 1` for every agent.
pub fn validate_step_sizes(l: &[f64], tau: &[f64], beta: f64) -> Result<StepSizes, StepError> {
    if l.len() != tau.len() {
        return Err(StepError::LengthMismatch {
            expected: l.len(),
            got: tau.len(),
        });
    }
    if tau.is_empty() {
        return Err(StepError::LengthMismatch { expected: 1, got: 0 });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(StepError::NonPositive("beta"));
    }
    for (i, (&li, &ti)) in l.iter().zip(tau).enumerate() {
        if !(li > 0.0 && li.is_finite()) {
            return Err(StepError::StepSizeViolation {
                agent: i,
                detail: format!("Lipschitz constant {li} must be positive"),
            });
        }
        if !(ti > 0.0) {
            return Err(StepError::StepSizeViolation {
                agent: i,
                detail: format!("tau = {ti} must be positive"),
            });
        }
        if !(ti < 2.0 / li) {
            return Err(StepError::StepSizeViolation {
                agent: i,
                detail: format!("tau = {ti} must be below 2/L = {}", 2.0 / li),
            });
        }
        if !(ti * beta < 1.0) {
            return Err(StepError::StepSizeViolation {
                agent: i,
                detail: format!("tau*beta = {} must be below 1", ti * beta),
            });
        }
    }
    let mut s = StepSizes::unchecked(tau.to_vec(), beta);
    s.strict = l.iter().zip(tau).all(|(&li, &ti)| ti < 1.0 / li);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPolicy {
    /// `τ_i = 2/L_i − 10⁻⁴`, `β = 0.5/max τ`.
    LassoDefault,
    /// `τ_i = 0.25`, `β = 2`.
    LogisticDefault,
}

pub fn default_step_sizes(l: &[f64], policy: StepPolicy) -> Result<StepSizes, StepError> {
    let tau: Vec<f64> = match policy {
        StepPolicy::LassoDefault => l.iter().map(|&li| 2.0 / li - 1e-4).collect(),
        StepPolicy::LogisticDefault => vec![0.25; l.len()],
    };
    let tau_max = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let beta = match policy {
        StepPolicy::LassoDefault => 0.5 / tau_max,
        StepPolicy::LogisticDefault => 2.0,
    };
    validate_step_sizes(l, &tau, beta)
}

/// `S_i = 2τ_i I + τ_i(1 − τβ + τ_iβ)/(1 − τβ)·U_iU_iᵀ`, factored once.
#[derive(Debug, Clone)]
pub struct DualPreconditioner {
    matrices: Vec<DMatrix<f64>>,
    factors: Vec<Option<Cholesky<f64, Dyn>>>,
}

pub fn build_dual_preconditioner(u: &[DMatrix<f64>], s: &StepSizes) -> Result<DualPreconditioner, StepError> {
    if u.len() != s.tau().len() {
        return Err(StepError::LengthMismatch {
            expected: u.len(),
            got: s.tau().len(),
        });
    }
    let tb = s.tau_max() * s.beta();
    let mut matrices = Vec::with_capacity(u.len());
    let mut factors = Vec::with_capacity(u.len());
    for (i, (ui, &ti)) in u.iter().zip(s.tau()).enumerate() {
        let p = ui.nrows();
        if p == 0 {
            matrices.push(DMatrix::zeros(0, 0));
            factors.push(None);
            continue;
        }
        let coeff = ti * (1.0 - tb + ti * s.beta()) / (1.0 - tb);
        let mut si = ui * ui.transpose() * coeff;
        for k in 0..p {
            si[(k, k)] += 2.0 * ti;
        }
        si = (&si + si.transpose()) * 0.5;
        if !coeff.is_finite() || si.iter().any(|v| !v.is_finite()) {
            return Err(StepError::FactorizationFailure(i));
        }
        let chol = Cholesky::new(si.clone()).ok_or(StepError::FactorizationFailure(i))?;
        matrices.push(si);
        factors.push(Some(chol));
    }
    Ok(DualPreconditioner { matrices, factors })
}

impl DualPreconditioner {
    pub fn matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    pub fn agents(&self) -> usize {
        self.matrices.len()
    }

    /// `S_i⁻¹ r` by the cached factorization.
    pub fn apply_s_inverse(&self, i: usize, r: &DVector<f64>) -> DVector<f64> {
        match &self.factors[i] {
            Some(c) => c.solve(r),
            None => DVector::zeros(0),
        }
    }

    /// `rᵀ S_i r`.
    pub fn quadratic(&self, i: usize, r: &DVector<f64>) -> f64 {
        if r.is_empty() {
            return 0.0;
        }
        r.dot(&(&self.matrices[i] * r))
    }
}

/// A primal-dual point `w = (x₁, x₂, ỹ₁, y₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x1: Blocks,
    pub x2: Blocks,
    pub y1t: Blocks,
    pub y2: Blocks,
}

impl Iterate {
    pub fn zeros(m: usize, n: usize, p: usize) -> Self {
        Iterate {
            x1: linalg::zeros(m, n),
            x2: linalg::zeros(m, p),
            y1t: linalg::zeros(m, n),
            y2: linalg::zeros(m, p),
        }
    }

    pub fn sub(&self, other: &Iterate) -> Iterate {
        Iterate {
            x1: linalg::sub(&self.x1, &other.x1),
            x2: linalg::sub(&self.x2, &other.x2),
            y1t: linalg::sub(&self.y1t, &other.y1t),
            y2: linalg::sub(&self.y2, &other.y2),
        }
    }

    pub fn add(&self, other: &Iterate) -> Iterate {
        Iterate {
            x1: linalg::add(&self.x1, &other.x1),
            x2: linalg::add(&self.x2, &other.x2),
            y1t: linalg::add(&self.y1t, &other.y1t),
            y2: linalg::add(&self.y2, &other.y2),
        }
    }

    pub fn scale(&self, s: f64) -> Iterate {
        Iterate {
            x1: linalg::scale(&self.x1, s),
            x2: linalg::scale(&self.x2, s),
            y1t: linalg::scale(&self.y1t, s),
            y2: linalg::scale(&self.y2, s),
        }
    }

    /// Same primal part, dual replaced.
    pub fn with_dual(&self, y1t: Blocks, y2: Blocks) -> Iterate {
        Iterate {
            x1: self.x1.clone(),
            x2: self.x2.clone(),
            y1t,
            y2,
        }
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.x1)
            && linalg::all_finite(&self.x2)
            && linalg::all_finite(&self.y1t)
            && linalg::all_finite(&self.y2)
    }
}

/// Full solver state: the current point plus the half-step primal `x̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub x1: Blocks,
    pub x2: Blocks,
    pub y1_tilde: Blocks,
    pub y2: Blocks,
    pub xbar1: Blocks,
    pub xbar2: Blocks,
}

impl PrimalDualState {
    /// `x₁ = x̄₁ = 0`, `x₂ = x̄₂ = 0`, `ỹ₁ = 0`, `y₂ = 0`.
    pub fn zeros(m: usize, n: usize, p: usize) -> Self {
        Self::from_iterate(&Iterate::zeros(m, n, p))
    }

    pub fn from_iterate(w: &Iterate) -> Self {
        PrimalDualState {
            x1: w.x1.clone(),
            x2: w.x2.clone(),
            y1_tilde: w.y1t.clone(),
            y2: w.y2.clone(),
            xbar1: w.x1.clone(),
            xbar2: w.x2.clone(),
        }
    }

    pub fn point(&self) -> Iterate {
        Iterate {
            x1: self.x1.clone(),
            x2: self.x2.clone(),
            y1t: self.y1_tilde.clone(),
            y2: self.y2.clone(),
        }
    }

    /// `v = (x̄, y)`.
    pub fn half_point(&self) -> Iterate {
        Iterate {
            x1: self.xbar1.clone(),
            x2: self.xbar2.clone(),
            y1t: self.y1_tilde.clone(),
            y2: self.y2.clone(),
        }
    }
}

/// The operators `H`, `M`, `M₁` as quadratic forms on `Iterate` differences.
///
/// `H = (Γ⁻¹, Q)`, `M = (Γ⁻¹ − ½L_F, Q − BΓBᵀ)`, `M₁ = (Γ⁻¹ − L_F, Q − BΓBᵀ)`
/// with `Q = diag(I/β, S)` and `B = [[√V, 0], [U, −I]]`. The `y₁` block is
/// evaluated from `ỹ₁` as `ỹ₁ᵀV⁺ỹ₁`, valid because every iterate keeps
/// `y₁` in the range of `√V`.
#[derive(Debug, Clone)]
pub struct MetricOperators {
    tau: Vec<f64>,
    lipschitz: Vec<f64>,
    beta: f64,
    u: Vec<DMatrix<f64>>,
    pc: DualPreconditioner,
    v_pinv: DMatrix<f64>,
}

impl MetricOperators {
    pub fn new(
        problem: &ProblemInstance,
        w: &MixingMatrix,
        steps: &StepSizes,
        pc: &DualPreconditioner,
    ) -> Self {
        let v = w.laplacian() * 0.5;
        MetricOperators {
            tau: steps.tau().to_vec(),
            lipschitz: problem.lipschitz(),
            beta: steps.beta(),
            u: problem.agents.iter().map(|a| a.u.clone()).collect(),
            pc: pc.clone(),
            v_pinv: linalg::sym_pinv(&v, 1e-12),
        }
    }

    /// `ỹ₁ᵀ V⁺ ỹ₁ = ‖y₁‖²` for the minimum-norm `y₁`.
    pub fn y1_norm_sq(&self, y1t: &[DVector<f64>]) -> f64 {
        linalg::dot(y1t, &linalg::kron_apply(&self.v_pinv, y1t))
    }

    /// `‖Bᵀy‖²_Γ = Σ τ_i(‖ỹ₁ᵢ + U_iᵀy₂ᵢ‖² + ‖y₂ᵢ‖²)`.
    pub fn bt_gamma_sq(&self, y1t: &[DVector<f64>], y2: &[DVector<f64>]) -> f64 {
        (0..self.tau.len())
            .map(|i| {
                let top = &y1t[i] + self.u[i].tr_mul(&y2[i]);
                self.tau[i] * (top.norm_squared() + y2[i].norm_squared())
            })
            .sum()
    }

    fn x_form(&self, d: &Iterate, l_weight: f64) -> f64 {
        (0..self.tau.len())
            .map(|i| {
                let c = 1.0 / self.tau[i] - l_weight * self.lipschitz[i];
                c * (d.x1[i].norm_squared() + d.x2[i].norm_squared())
            })
            .sum()
    }

    /// `‖y‖²_Q`.
    pub fn q_norm_sq(&self, y1t: &[DVector<f64>], y2: &[DVector<f64>]) -> f64 {
        self.y1_norm_sq(y1t) / self.beta + (0..y2.len()).map(|i| self.pc.quadratic(i, &y2[i])).sum::<f64>()
    }

    pub fn h_norm_sq(&self, d: &Iterate) -> Result<f64, StepError> {
        checked(self.x_form(d, 0.0) + self.q_norm_sq(&d.y1t, &d.y2))
    }

    pub fn m_norm_sq(&self, d: &Iterate) -> Result<f64, StepError> {
        self.m_form(d, 0.5)
    }

    pub fn m1_norm_sq(&self, d: &Iterate) -> Result<f64, StepError> {
        self.m_form(d, 1.0)
    }

    fn m_form(&self, d: &Iterate, l_weight: f64) -> Result<f64, StepError> {
        let q = self.q_norm_sq(&d.y1t, &d.y2);
        let b = self.bt_gamma_sq(&d.y1t, &d.y2);
        let x = self.x_form(d, l_weight);
        let total = x + q - b;
        // Cancellation in q - b scales with the size of the terms.
        let scale = x.abs() + q + b;
        if total < -1e-12 * scale.max(1.0) {
            return Err(StepError::NegativeForm(total));
        }
        Ok(total.max(0.0))
    }
}

fn checked(v: f64) -> Result<f64, StepError> {
    if v < -1e-12 {
        Err(StepError::NegativeForm(v))
    } else {
        Ok(v.max(0.0))
    }
}
