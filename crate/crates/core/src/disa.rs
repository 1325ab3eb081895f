//! The dual inexact splitting algorithm.
//!
//! [`DisaEngine`] is the per-agent form: every agent touches only its own
//! data except for one exchange of `x̄₁` per iteration. [`DenseDisa`] runs the
//! same recursion on explicit stacked matrices and is used to verify the
//! per-agent form on small instances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::{self, Blocks};
use crate::metrics::{kkt_element, KktInputs, Trace};
use crate::network::{gossip_round, MixingMatrix};
use crate::problems::ProblemInstance;
use crate::run::{run, Counters, RunError, RunReference, Solver, StepInfo, StoppingRule};
use crate::solver_core::{build_dual_preconditioner, DualPreconditioner, Iterate, PrimalDualState, StepSizes};
use crate::Error;

#[derive(Debug, Clone)]
pub struct DisaEngine {
    pub problem: ProblemInstance,
    pub w: MixingMatrix,
    pub steps: StepSizes,
    pub pc: DualPreconditioner,
    pub state: PrimalDualState,
    /// Compute the KKT residual element each iteration (one extra gradient
    /// per agent, not counted in `counters`).
    pub track_kkt: bool,
    pub(crate) counters: Counters,
    pub(crate) grad: Blocks,
}

impl DisaEngine {
    /// Starts from `w⁰ = 0`.
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix, steps: StepSizes) -> Result<Self, Error> {
        let (m, n, p) = (problem.agent_count(), problem.primal_dim, problem.map_dim);
        Self::with_state(problem, w, steps, PrimalDualState::zeros(m, n, p))
    }

    pub fn with_state(
        problem: &ProblemInstance,
        w: &MixingMatrix,
        steps: StepSizes,
        state: PrimalDualState,
    ) -> Result<Self, Error> {
        let m = problem.agent_count();
        if w.agents() != m || steps.tau().len() != m {
            return Err(Error::Invalid(format!(
                "{m} agents but W is {}x{} and {} step sizes were given",
                w.agents(),
                w.agents(),
                steps.tau().len()
            )));
        }
        let u: Vec<_> = problem.agents.iter().map(|a| a.u.clone()).collect();
        let pc = build_dual_preconditioner(&u, &steps)?;
        Ok(DisaEngine {
            problem: problem.clone(),
            w: w.clone(),
            steps,
            pc,
            state,
            track_kkt: true,
            counters: Counters::default(),
            grad: Vec::new(),
        })
    }

    /// `x̄₁ᵢ = x₁ᵢ − τᵢ(∇fᵢ(x₁ᵢ) + ỹ₁ᵢ + Uᵢᵀy₂ᵢ)`, `x̄₂ᵢ = prox_{τᵢgᵢ}(x₂ᵢ + τᵢy₂ᵢ)`.
    ///
    /// Caches the gradients for [`disa_primal_step`](Self::disa_primal_step).
    pub fn disa_half_step(&mut self) {
        let s = &mut self.state;
        self.grad.clear();
        for (i, a) in self.problem.agents.iter().enumerate() {
            let tau = self.steps.tau()[i];
            let g = a.f.gradient(&s.x1[i]);
            s.xbar1[i] = &s.x1[i] - (&g + &s.y1_tilde[i] + a.u.tr_mul(&s.y2[i])) * tau;
            s.xbar2[i] = a.g.prox(&(&s.x2[i] + &s.y2[i] * tau), tau);
            self.grad.push(g);
        }
        self.counters.gradient_calls += self.problem.agent_count() as u64;
        self.counters.prox_calls += self.problem.agent_count() as u64;
    }

    /// `ỹ₁ᵢ += (β/2)(x̄₁ᵢ − Σⱼ Wᵢⱼx̄₁ⱼ)`, `y₂ᵢ += Sᵢ⁻¹(Uᵢx̄₁ᵢ − x̄₂ᵢ)`.
    pub fn disa_dual_step(&mut self) -> Result<(), Error> {
        let mixed = gossip_round(&self.w, &self.state.xbar1)?;
        self.counters.gossip_rounds += 1;
        let half_beta = 0.5 * self.steps.beta();
        let s = &mut self.state;
        for (i, a) in self.problem.agents.iter().enumerate() {
            s.y1_tilde[i] += (&s.xbar1[i] - &mixed[i]) * half_beta;
            let r = &a.u * &s.xbar1[i] - &s.xbar2[i];
            s.y2[i] += self.pc.apply_s_inverse(i, &r);
        }
        Ok(())
    }

    /// `x₁ᵢ = x₁ᵢ − τᵢ(∇fᵢ(x₁ᵢ) + ỹ₁ᵢ + Uᵢᵀy₂ᵢ)` with the new dual and the cached
    /// gradient, `x₂ᵢ = prox_{τᵢgᵢ}(x₂ᵢ + τᵢy₂ᵢ)`.
    pub fn disa_primal_step(&mut self) {
        let s = &mut self.state;
        for (i, a) in self.problem.agents.iter().enumerate() {
            let tau = self.steps.tau()[i];
            s.x1[i] = &s.x1[i] - (&self.grad[i] + &s.y1_tilde[i] + a.u.tr_mul(&s.y2[i])) * tau;
            s.x2[i] = a.g.prox(&(&s.x2[i] + &s.y2[i] * tau), tau);
        }
        self.counters.prox_calls += self.problem.agent_count() as u64;
    }

    /// One full iteration: half step, exchange, dual step, primal step.
    pub fn disa_iterate(&mut self) -> Result<StepInfo, Error> {
        let before = self.track_kkt.then(|| self.state.point());
        self.disa_half_step();
        self.disa_dual_step()?;
        let kkt_norm = before.map(|b| {
            kkt_element(
                &self.problem,
                &self.w,
                &self.steps,
                &KktInputs {
                    before: &b,
                    grad_before: &self.grad,
                    xbar1: &self.state.xbar1,
                    xbar2: &self.state.xbar2,
                    y1t_next: &self.state.y1_tilde,
                    y2_next: &self.state.y2,
                    d: None,
                },
            )
            .norm()
        });
        self.disa_primal_step();
        Ok(StepInfo {
            kkt_norm,
            ..StepInfo::default()
        })
    }
}

impl Solver for DisaEngine {
    fn name(&self) -> &'static str {
        "disa"
    }

    fn step(&mut self) -> Result<StepInfo, Error> {
        self.disa_iterate()
    }

    fn x1(&self) -> &[DVector<f64>] {
        &self.state.x1
    }

    fn counters(&self) -> Counters {
        self.counters
    }

    fn point(&self) -> Option<Iterate> {
        Some(self.state.point())
    }

    fn half_point(&self) -> Option<Iterate> {
        Some(self.state.half_point())
    }
}

pub fn disa_run(
    engine: &mut DisaEngine,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    let problem = engine.problem.clone();
    let w = engine.w.clone();
    run(engine, &problem, &w, stop, reference)
}

/// Dense verification mode is limited to `m(n+p)` at most this.
pub const DENSE_LIMIT: usize = 5000;

/// Explicit-matrix form of DISA with `B = [[√V, 0], [U, −I]]` and
/// `Q = diag(I/β, S)`, holding the true `y₁` rather than `ỹ₁`.
#[derive(Debug, Clone)]
pub struct DenseDisa {
    problem: ProblemInstance,
    steps: StepSizes,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    q_chol: Cholesky<f64, Dyn>,
    sqrt_v: DMatrix<f64>,
    /// `(x₁, x₂)` stacked agent-major within each block.
    pub x: DVector<f64>,
    /// `(y₁, y₂)`.
    pub y: DVector<f64>,
    /// Half-step `x̄`.
    pub xbar: DVector<f64>,
}

impl DenseDisa {
    pub fn new(problem: &ProblemInstance, w: &MixingMatrix, steps: StepSizes) -> Result<Self, Error> {
        let (m, n, p) = (problem.agent_count(), problem.primal_dim, problem.map_dim);
        let size = m * (n + p);
        if size > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_LIMIT,
            });
        }
        let sqrt_v = linalg::kron_identity(&linalg::sym_sqrt(&(w.laplacian() * 0.5)), n);
        let mut b = DMatrix::zeros(size, size);
        b.view_mut((0, 0), (m * n, m * n)).copy_from(&sqrt_v);
        for (i, a) in problem.agents.iter().enumerate() {
            b.view_mut((m * n + i * p, i * n), (p, n)).copy_from(&a.u);
            for k in 0..p {
                b[(m * n + i * p + k, m * n + i * p + k)] = -1.0;
            }
        }
        let u: Vec<_> = problem.agents.iter().map(|a| a.u.clone()).collect();
        let pc = build_dual_preconditioner(&u, &steps)?;
        let mut q = DMatrix::zeros(size, size);
        for k in 0..m * n {
            q[(k, k)] = 1.0 / steps.beta();
        }
        for i in 0..m {
            q.view_mut((m * n + i * p, m * n + i * p), (p, p)).copy_from(pc.matrix(i));
        }
        let q_chol = Cholesky::new(q.clone()).ok_or(crate::solver_core::StepError::FactorizationFailure(0))?;
        Ok(DenseDisa {
            problem: problem.clone(),
            steps,
            b,
            q,
            q_chol,
            sqrt_v,
            x: DVector::zeros(size),
            y: DVector::zeros(size),
            xbar: DVector::zeros(size),
        })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `√V = √(½(I − W)) ⊗ I_n`.
    pub fn sqrt_v(&self) -> &DMatrix<f64> {
        &self.sqrt_v
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.problem.agent_count(), self.problem.primal_dim, self.problem.map_dim)
    }

    /// Sets `x` and `y` from per-agent blocks, recovering `y₁` as the
    /// minimum-norm solution of `√V y₁ = ỹ₁`.
    pub fn set_from(&mut self, w: &Iterate) {
        let (m, n, _) = self.dims();
        self.x = stack_pair(&w.x1, &w.x2);
        let pinv = linalg::sym_pinv(&self.sqrt_v, 1e-10);
        let y1 = pinv * linalg::stack(&w.y1t);
        self.y = stack_pair(&linalg::unstack(&y1, m, n), &w.y2);
        self.xbar = self.x.clone();
    }

    pub fn x1(&self) -> Blocks {
        let (m, n, _) = self.dims();
        linalg::unstack(&self.x.rows(0, m * n).into_owned(), m, n)
    }

    pub fn x2(&self) -> Blocks {
        let (m, n, p) = self.dims();
        linalg::unstack(&self.x.rows(m * n, m * p).into_owned(), m, p)
    }

    pub fn y1(&self) -> DVector<f64> {
        let (m, n, _) = self.dims();
        self.y.rows(0, m * n).into_owned()
    }

    /// `√V y₁`, comparable with the per-agent `ỹ₁`.
    pub fn y1_tilde(&self) -> Blocks {
        let (m, n, _) = self.dims();
        linalg::unstack(&(&self.sqrt_v * self.y1()), m, n)
    }

    pub fn y2(&self) -> Blocks {
        let (m, n, p) = self.dims();
        linalg::unstack(&self.y.rows(m * n, m * p).into_owned(), m, p)
    }

    fn grad_f(&self) -> DVector<f64> {
        let (m, n, p) = self.dims();
        let mut g = DVector::zeros(m * (n + p));
        for (i, a) in self.problem.agents.iter().enumerate() {
            let xi = self.x.rows(i * n, n).into_owned();
            g.rows_mut(i * n, n).copy_from(&a.f.gradient(&xi));
        }
        g
    }

    fn gamma(&self) -> DVector<f64> {
        let (m, n, p) = self.dims();
        let mut d = DVector::zeros(m * (n + p));
        for i in 0..m {
            let t = self.steps.tau()[i];
            d.rows_mut(i * n, n).fill(t);
            d.rows_mut(m * n + i * p, p).fill(t);
        }
        d
    }

    // prox^{Γ⁻¹}_G: identity on x₁, agent-wise prox_{τᵢgᵢ} on x₂.
    fn prox_g(&self, v: DVector<f64>) -> DVector<f64> {
        let (m, n, p) = self.dims();
        let mut out = v;
        for (i, a) in self.problem.agents.iter().enumerate() {
            let off = m * n + i * p;
            let seg = out.rows(off, p).into_owned();
            out.rows_mut(off, p).copy_from(&a.g.prox(&seg, self.steps.tau()[i]));
        }
        out
    }

    /// `x̄ = prox(x − Γ∇F(x) − ΓBᵀy)`, `y' = y + Q⁻¹Bx̄`,
    /// `x' = prox(x − Γ∇F(x) − ΓBᵀy')`.
    pub fn compact_form_iterate(&mut self) {
        let gamma = self.gamma();
        let base = &self.x - self.grad_f().component_mul(&gamma);
        self.xbar = self.prox_g(&base - self.b.tr_mul(&self.y).component_mul(&gamma));
        self.y += self.q_chol.solve(&(&self.b * &self.xbar));
        self.x = self.prox_g(&base - self.b.tr_mul(&self.y).component_mul(&gamma));
    }
}

fn stack_pair(a: &[DVector<f64>], b: &[DVector<f64>]) -> DVector<f64> {
    let top = linalg::stack(a);
    let bottom = linalg::stack(b);
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(&top);
    out.rows_mut(top.len(), bottom.len()).copy_from(&bottom);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_graph, metropolis_weights, Topology};
    use crate::problems::{make_generalized_lasso, AgentProblem, InstanceMeta, LeastSquares};
    use crate::prox::ProxOperator;
    use crate::solver_core::{default_step_sizes, StepPolicy};
    use std::sync::Arc;

    fn lasso_engine(m: usize, n: usize) -> DisaEngine {
        let inst = make_generalized_lasso(m, n, 3, 1.0).unwrap();
        let w = metropolis_weights(&build_graph(Topology::Line, m).unwrap());
        let steps = default_step_sizes(&inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
        DisaEngine::new(&inst, &w, steps).unwrap()
    }

    #[test]
    fn half_step_with_zero_gradient_keeps_x1() {
        // f = ½‖x − 0‖² evaluated at x = 0 has zero gradient.
        let f = LeastSquares::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let agent = AgentProblem {
            f: Arc::new(f),
            g: ProxOperator::Zero,
            u: DMatrix::identity(2, 2),
        };
        let inst = ProblemInstance::new(vec![agent], InstanceMeta::default()).unwrap();
        let w = MixingMatrix::from_dense(DMatrix::identity(1, 1));
        let mut e = DisaEngine::new(&inst, &w, StepSizes::unchecked(vec![0.5], 1.0)).unwrap();
        e.state.x2[0] = DVector::from_vec(vec![1.0, -1.0]);
        e.state.y2[0] = DVector::from_vec(vec![0.0, 0.0]);
        e.disa_half_step();
        assert_eq!(e.state.xbar1[0], DVector::zeros(2));
        // g = 0: x̄₂ = x₂ + τy₂.
        e.state.y2[0] = DVector::from_vec(vec![2.0, 4.0]);
        e.disa_half_step();
        assert_eq!(e.state.xbar2[0], DVector::from_vec(vec![2.0, 1.0]));
    }

    #[test]
    fn dual_step_fixed_on_consensus_and_feasibility() {
        let mut e = lasso_engine(3, 4);
        let c = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
        e.state.xbar1 = vec![c.clone(); 3];
        e.state.xbar2 = e.problem.agents.iter().map(|a| &a.u * &c).collect();
        let before = e.state.clone();
        e.disa_dual_step().unwrap();
        for i in 0..3 {
            assert!((&e.state.y1_tilde[i] - &before.y1_tilde[i]).amax() < 1e-14);
            assert!((&e.state.y2[i] - &before.y2[i]).amax() < 1e-13);
        }
    }

    #[test]
    fn plain_gradient_descent_when_single_agent_and_no_map() {
        let f = LeastSquares::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), DVector::from_vec(vec![1.0, 3.0])).unwrap();
        let agent = AgentProblem {
            f: Arc::new(f.clone()),
            g: ProxOperator::Zero,
            u: DMatrix::zeros(1, 2),
        };
        let inst = ProblemInstance::new(vec![agent], InstanceMeta::default()).unwrap();
        let w = MixingMatrix::from_dense(DMatrix::identity(1, 1));
        let tau = 0.2;
        let mut e = DisaEngine::new(&inst, &w, StepSizes::unchecked(vec![tau], 1.0)).unwrap();
        let mut x = DVector::from_vec(vec![0.0, 0.0]);
        use crate::problems::SmoothLoss;
        for _ in 0..10 {
            e.disa_iterate().unwrap();
            x = &x - f.gradient(&x) * tau;
            assert!((&e.state.x1[0] - &x).amax() < 1e-14);
            assert_eq!(e.state.y1_tilde[0], DVector::zeros(2));
        }
    }

    #[test]
    fn counters_one_gossip_one_gradient_per_iteration() {
        let mut e = lasso_engine(4, 5);
        for _ in 0..7 {
            e.disa_iterate().unwrap();
        }
        let c = e.counters();
        assert_eq!(c.gossip_rounds, 7);
        assert_eq!(c.gradient_calls, 7 * 4);
        assert_eq!(c.prox_calls, 2 * 7 * 4);
    }

    #[test]
    fn y1_tilde_stays_in_range() {
        let mut e = lasso_engine(4, 6);
        for _ in 0..30 {
            e.disa_iterate().unwrap();
        }
        let sum = e.state.y1_tilde.iter().fold(DVector::zeros(6), |a, b| a + b);
        assert!(sum.amax() < 1e-10);
    }

    #[test]
    fn dense_q_structure() {
        let e = lasso_engine(3, 4);
        let d = DenseDisa::new(&e.problem, &e.w, e.steps.clone()).unwrap();
        let (mn, p) = (12, e.problem.map_dim);
        for k in 0..mn {
            assert_eq!(d.q()[(k, k)], 1.0 / e.steps.beta());
        }
        assert_eq!(d.q().view((mn, mn), (p, p)).into_owned(), e.pc.matrix(0).clone());
        assert_eq!(d.q()[(0, mn)], 0.0);
    }

    #[test]
    fn dense_matches_per_agent_one_step() {
        let mut e = lasso_engine(3, 4);
        let mut d = DenseDisa::new(&e.problem, &e.w, e.steps.clone()).unwrap();
        e.disa_iterate().unwrap();
        d.compact_form_iterate();
        assert!((linalg::stack(&e.state.x1) - linalg::stack(&d.x1())).amax() < 1e-12);
        assert!((linalg::stack(&e.state.y1_tilde) - linalg::stack(&d.y1_tilde())).amax() < 1e-12);
    }

    #[test]
    fn dense_size_guard() {
        use crate::problems::SquaredDistance;
        let n = 2600;
        let agent = AgentProblem {
            f: Arc::new(SquaredDistance {
                center: DVector::zeros(n),
                curvature: 1.0,
            }),
            g: ProxOperator::Zero,
            u: DMatrix::zeros(0, n),
        };
        let inst = ProblemInstance::new(vec![agent.clone(), agent], InstanceMeta::default()).unwrap();
        let w = metropolis_weights(&build_graph(Topology::Line, 2).unwrap());
        let steps = StepSizes::unchecked(vec![0.1, 0.1], 1.0);
        assert!(matches!(DenseDisa::new(&inst, &w, steps), Err(Error::SizeGuard { size: 5200, .. })));
    }

    #[test]
    fn max_iters_zero_leaves_state_alone() {
        let mut e = lasso_engine(3, 4);
        let before = e.state.clone();
        let t = disa_run(&mut e, &StoppingRule::max_iterations(0), None).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(e.state, before);
    }
}
