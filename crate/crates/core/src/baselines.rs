//! Comparison solvers: Condat-Vu, linearized ALM and NIDS.
//!
//! Condat-Vu and L-ALM use the textbook primal-dual iterations and run on
//! explicit `√V`, so they share the dense size guard. Their admissible step
//! sizes shrink with `‖UᵀU + V‖`, which is the contrast the benchmarks show.

use nalgebra::{DMatrix, DVector};

use crate::disa::DENSE_LIMIT;
use crate::linalg::{self, Blocks};
use crate::metrics::Trace;
use crate::network::MixingMatrix;
use crate::problems::ProblemInstance;
use crate::prox::{moreau_conjugate_prox, ProxOperator};
use crate::run::{run, Counters, RunError, RunReference, Solver, StepInfo, StoppingRule};
use crate::Error;

fn size_guard(problem: &ProblemInstance) -> Result<(), Error> {
    let size = problem.agent_count() * (problem.primal_dim + problem.map_dim);
    if size > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

fn check_w(problem: &ProblemInstance, w: &MixingMatrix) -> Result<(), Error> {
    if w.agents() != problem.agent_count() {
        return Err(Error::Invalid(format!(
            "{} agents but W is {}x{}",
            problem.agent_count(),
            w.agents(),
            w.agents()
        )));
    }
    Ok(())
}

fn check_step(tau: f64, beta: f64) -> Result<(), Error> {
    if !(tau > 0.0 && beta > 0.0 && tau.is_finite() && beta.is_finite()) {
        return Err(crate::solver_core::StepError::NonPositive("tau, beta").into());
    }
    Ok(())
}

/// `min Σ fᵢ(x₁ᵢ) + θ₂(Cx₁)` with `C = [U; √V]` and `θ₂(z₁, z₂) = Σ gᵢ(z₁ᵢ) + δ₀(z₂)`.
#[derive(Debug, Clone)]
pub struct ReformulatedProblem {
    pub problem: ProblemInstance,
    pub w: MixingMatrix,
    /// `√(½(I − W))`, applied blockwise.
    sqrt_v: DMatrix<f64>,
}

impl ReformulatedProblem {
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix) -> Result<Self, Error> {
        size_guard(problem)?;
        check_w(problem, w)?;
        Ok(ReformulatedProblem {
            problem: problem.clone(),
            w: w.clone(),
            sqrt_v: linalg::sym_sqrt(&(w.laplacian() * 0.5)),
        })
    }

    pub fn sqrt_v(&self) -> &DMatrix<f64> {
        &self.sqrt_v
    }

    /// `Cx = (Ux, √V x)`.
    pub fn c_apply(&self, x: &[DVector<f64>]) -> (Blocks, Blocks) {
        let ux = self.problem.agents.iter().zip(x).map(|(a, xi)| &a.u * xi).collect();
        (ux, linalg::kron_apply(&self.sqrt_v, x))
    }

    /// `Cᵀ(z₁, z₂) = Uᵀz₁ + √V z₂`.
    pub fn ct_apply(&self, z1: &[DVector<f64>], z2: &[DVector<f64>]) -> Blocks {
        let v = linalg::kron_apply(&self.sqrt_v, z2);
        self.problem
            .agents
            .iter()
            .zip(z1)
            .zip(v)
            .map(|((a, zi), vi)| a.u.tr_mul(zi) + vi)
            .collect()
    }

    /// `‖CᵀC‖ = ‖UᵀU + V‖`, formed densely.
    pub fn ctc_norm(&self) -> f64 {
        let (m, n) = (self.problem.agent_count(), self.problem.primal_dim);
        let mut a = linalg::kron_identity(&(&self.sqrt_v * &self.sqrt_v), n);
        for (i, ag) in self.problem.agents.iter().enumerate() {
            let utu = ag.u.tr_mul(&ag.u);
            let mut blk = a.view_mut((i * n, i * n), (n, n));
            blk += utu;
        }
        debug_assert_eq!(a.nrows(), m * n);
        linalg::sym_norm(&a)
    }
}

fn gradients(problem: &ProblemInstance, x: &[DVector<f64>]) -> Blocks {
    problem.agents.iter().zip(x).map(|(a, xi)| a.f.gradient(xi)).collect()
}

/// Condat-Vu on the reformulated problem:
/// `x' = x − τ(∇θ₁(x) + Cᵀy)`, `y' = prox_{βθ₂*}(y + βC(2x' − x))`.
#[derive(Debug, Clone)]
pub struct CondatVu {
    rp: ReformulatedProblem,
    tau: f64,
    beta: f64,
    pub x: Blocks,
    /// Dual block paired with `Ux`.
    pub y_u: Blocks,
    /// Dual block paired with `√V x`.
    pub y_v: Blocks,
    counters: Counters,
}

impl CondatVu {
    pub fn new(rp: &ReformulatedProblem, tau: f64, beta: f64) -> Result<Self, Error> {
        check_step(tau, beta)?;
        let (m, n, p) = (rp.problem.agent_count(), rp.problem.primal_dim, rp.problem.map_dim);
        Ok(CondatVu {
            rp: rp.clone(),
            tau,
            beta,
            x: linalg::zeros(m, n),
            y_u: linalg::zeros(m, p),
            y_v: linalg::zeros(m, n),
            counters: Counters::default(),
        })
    }

    /// Squared norm of the fixed-point residual of one iteration, without
    /// advancing.
    pub fn fixed_point_residual(&self) -> f64 {
        let mut probe = self.clone();
        probe.iterate();
        linalg::norm_sq(&linalg::sub(&probe.x, &self.x))
            + linalg::norm_sq(&linalg::sub(&probe.y_u, &self.y_u))
            + linalg::norm_sq(&linalg::sub(&probe.y_v, &self.y_v))
    }

    pub fn iterate(&mut self) {
        let problem = &self.rp.problem;
        let g = gradients(problem, &self.x);
        let cty = self.rp.ct_apply(&self.y_u, &self.y_v);
        let x_new: Blocks = self
            .x
            .iter()
            .zip(g.iter().zip(&cty))
            .map(|(xi, (gi, ci))| xi - (gi + ci) * self.tau)
            .collect();
        let extrap = linalg::sub(&linalg::scale(&x_new, 2.0), &self.x);
        let (cu, cv) = self.rp.c_apply(&extrap);
        for (i, a) in problem.agents.iter().enumerate() {
            let z = &self.y_u[i] + &cu[i] * self.beta;
            self.y_u[i] = moreau_conjugate_prox(&a.g, &z, self.beta);
            // δ₀* ≡ 0, so its conjugate prox is the identity.
            self.y_v[i] += &cv[i] * self.beta;
        }
        self.x = x_new;
        let m = problem.agent_count() as u64;
        self.counters.gradient_calls += m;
        self.counters.prox_calls += m;
        self.counters.gossip_rounds += 2;
    }
}

impl Solver for CondatVu {
    fn name(&self) -> &'static str {
        "condat_vu"
    }

    fn step(&mut self) -> Result<StepInfo, Error> {
        self.iterate();
        Ok(StepInfo::default())
    }

    fn x1(&self) -> &[DVector<f64>] {
        &self.x
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

pub fn condat_vu_run(
    rp: &ReformulatedProblem,
    tau: f64,
    beta: f64,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    let mut s = CondatVu::new(rp, tau, beta)?;
    run(&mut s, &rp.problem, &rp.w, stop, reference)
}

/// Linearized ALM on `min F(x₁) + G(x₂)` s.t. `Bx = 0`:
/// `x' = prox_{τG}(x − τ(∇F(x) + Bᵀy + βBᵀBx))`, `y' = y + βBx'`.
#[derive(Debug, Clone)]
pub struct Lalm {
    problem: ProblemInstance,
    sqrt_v: DMatrix<f64>,
    tau: f64,
    beta: f64,
    pub x1: Blocks,
    pub x2: Blocks,
    pub y1: Blocks,
    pub y2: Blocks,
    counters: Counters,
}

impl Lalm {
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix, tau: f64, beta: f64) -> Result<Self, Error> {
        size_guard(problem)?;
        check_w(problem, w)?;
        check_step(tau, beta)?;
        let (m, n, p) = (problem.agent_count(), problem.primal_dim, problem.map_dim);
        Ok(Lalm {
            problem: problem.clone(),
            sqrt_v: linalg::sym_sqrt(&(w.laplacian() * 0.5)),
            tau,
            beta,
            x1: linalg::zeros(m, n),
            x2: linalg::zeros(m, p),
            y1: linalg::zeros(m, n),
            y2: linalg::zeros(m, p),
            counters: Counters::default(),
        })
    }

    /// `Bx = (√V x₁, Ux₁ − x₂)`.
    fn b_apply(&self, x1: &[DVector<f64>], x2: &[DVector<f64>]) -> (Blocks, Blocks) {
        let top = linalg::kron_apply(&self.sqrt_v, x1);
        let bottom = self
            .problem
            .agents
            .iter()
            .zip(x1.iter().zip(x2))
            .map(|(a, (a1, a2))| &a.u * a1 - a2)
            .collect();
        (top, bottom)
    }

    /// `Bᵀ(y₁, y₂) = (√V y₁ + Uᵀy₂, −y₂)`.
    fn bt_apply(&self, y1: &[DVector<f64>], y2: &[DVector<f64>]) -> (Blocks, Blocks) {
        let v = linalg::kron_apply(&self.sqrt_v, y1);
        let top = self
            .problem
            .agents
            .iter()
            .zip(y2)
            .zip(v)
            .map(|((a, yi), vi)| a.u.tr_mul(yi) + vi)
            .collect();
        (top, linalg::scale(y2, -1.0))
    }

    pub fn iterate(&mut self) {
        let g = gradients(&self.problem, &self.x1);
        let (b1, b2) = self.b_apply(&self.x1, &self.x2);
        // y + βBx, pushed through Bᵀ in one go.
        let s1 = linalg::add(&self.y1, &linalg::scale(&b1, self.beta));
        let s2 = linalg::add(&self.y2, &linalg::scale(&b2, self.beta));
        let (t1, t2) = self.bt_apply(&s1, &s2);
        for (i, a) in self.problem.agents.iter().enumerate() {
            self.x1[i] = &self.x1[i] - (&g[i] + &t1[i]) * self.tau;
            self.x2[i] = a.g.prox(&(&self.x2[i] - &t2[i] * self.tau), self.tau);
        }
        let (b1, b2) = self.b_apply(&self.x1, &self.x2);
        for i in 0..self.problem.agent_count() {
            self.y1[i] += &b1[i] * self.beta;
            self.y2[i] += &b2[i] * self.beta;
        }
        let m = self.problem.agent_count() as u64;
        self.counters.gradient_calls += m;
        self.counters.prox_calls += m;
        self.counters.gossip_rounds += 3;
    }
}

impl Solver for Lalm {
    fn name(&self) -> &'static str {
        "lalm"
    }

    fn step(&mut self) -> Result<StepInfo, Error> {
        self.iterate();
        Ok(StepInfo::default())
    }

    fn x1(&self) -> &[DVector<f64>] {
        &self.x1
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

pub fn lalm_run(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    tau: f64,
    beta: f64,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    let mut s = Lalm::new(problem, w, tau, beta)?;
    run(&mut s, problem, w, stop, reference)
}

/// NIDS in eliminated form:
/// `xᵏ⁺¹ = W̃(2xᵏ − xᵏ⁻¹ + τ∇F(xᵏ⁻¹) − τ∇F(xᵏ))`, `x¹ = W̃(x⁰ − τ∇F(x⁰))`,
/// with `W̃ = (I + W)/2`. Only the smooth part of the problem is used.
#[derive(Debug, Clone)]
pub struct Nids {
    problem: ProblemInstance,
    w_tilde: DMatrix<f64>,
    tau: f64,
    pub x: Blocks,
    x_prev: Blocks,
    grad_prev: Option<Blocks>,
    counters: Counters,
}

impl Nids {
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix, tau: f64) -> Result<Self, Error> {
        check_w(problem, w)?;
        check_step(tau, 1.0)?;
        if problem.agents.iter().any(|a| !matches!(a.g, ProxOperator::Zero)) {
            return Err(Error::Invalid("NIDS needs g = 0 for every agent".into()));
        }
        let m = problem.agent_count();
        let x = linalg::zeros(m, problem.primal_dim);
        Ok(Nids {
            problem: problem.clone(),
            w_tilde: (DMatrix::identity(m, m) + w.dense()) * 0.5,
            tau,
            x_prev: x.clone(),
            x,
            grad_prev: None,
            counters: Counters::default(),
        })
    }

    pub fn iterate(&mut self) {
        let g = gradients(&self.problem, &self.x);
        let inner: Blocks = match &self.grad_prev {
            None => linalg::sub(&self.x, &linalg::scale(&g, self.tau)),
            Some(gp) => (0..self.x.len())
                .map(|i| &self.x[i] * 2.0 - &self.x_prev[i] + (&gp[i] - &g[i]) * self.tau)
                .collect(),
        };
        let next = linalg::kron_apply(&self.w_tilde, &inner);
        self.x_prev = std::mem::replace(&mut self.x, next);
        self.grad_prev = Some(g);
        self.counters.gradient_calls += self.problem.agent_count() as u64;
        self.counters.gossip_rounds += 1;
    }
}

impl Solver for Nids {
    fn name(&self) -> &'static str {
        "nids"
    }

    fn step(&mut self) -> Result<StepInfo, Error> {
        self.iterate();
        Ok(StepInfo::default())
    }

    fn x1(&self) -> &[DVector<f64>] {
        &self.x
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

pub fn nids_reference_run(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    tau: f64,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    let mut s = Nids::new(problem, w, tau)?;
    run(&mut s, problem, w, stop, reference)
}

/// Benchmark step size for the baselines: `min_i 1/(Lᵢ/2 + β‖UUᵀ‖) − 10⁻⁴`.
pub fn baseline_tau(problem: &ProblemInstance, beta: f64) -> f64 {
    let uu = problem.max_uut_norm();
    problem
        .lipschitz()
        .iter()
        .map(|l| 1.0 / (l / 2.0 + beta * uu))
        .fold(f64::INFINITY, f64::min)
        - 1e-4
}
