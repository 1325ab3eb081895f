//! DISA with one approximate proximal evaluation per iteration.
//!
//! Each agent may return any `x̃₂` for which some
//! `d ∈ ∂g(x̃₂) − y₂ + (x̃₂ − x₂)/τ` has `‖d‖ ≤ εᵏ`. When `Σ εᵏ < ∞` the
//! iterates still converge to a solution.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error as ThisError;

use crate::disa::DisaEngine;
use crate::metrics::{kkt_element, KktInputs, Trace};
use crate::network::{gossip_round, MixingMatrix};
use crate::problems::ProblemInstance;
use crate::prox::{check_prox_optimality, ProxOperator};
use crate::run::{run, Counters, RunError, RunReference, Solver, StepInfo, StoppingRule};
use crate::solver_core::{Iterate, StepSizes};
use crate::Error;

#[derive(Debug, ThisError, Clone, PartialEq)]
pub enum VdisaError {
    #[error("power schedule needs eps0 > 0 and r > 1 (got eps0 = {eps0}, r = {r})")]
    NonSummable { eps0: f64, r: f64 },
    #[error("geometric schedule needs 0 < r < 1 (got {0})")]
    BadRatio(f64),
    #[error("inner solver reached residual {reached:e} > {target:e} after {iterations} iterations")]
    InnerSolverStall { iterations: usize, reached: f64, target: f64 },
}

/// Tolerance sequence `εᵏ`, indexed from `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSchedule {
    /// `εᵏ = 0`.
    Exact,
    /// `εᵏ = ε₀/(k+1)^r`.
    Power { eps0: f64, r: f64 },
    /// `εᵏ = r^k`.
    Geometric { r: f64 },
}

impl EpsilonSchedule {
    pub fn power(eps0: f64, r: f64) -> Result<Self, VdisaError> {
        if !(eps0 > 0.0 && r > 1.0) {
            return Err(VdisaError::NonSummable { eps0, r });
        }
        Ok(EpsilonSchedule::Power { eps0, r })
    }

    /// Power schedule without the summability check, for demonstrating what
    /// goes wrong when `Σ εᵏ = ∞`.
    pub fn power_unsafe(eps0: f64, r: f64) -> Self {
        EpsilonSchedule::Power { eps0, r }
    }

    pub fn geometric(r: f64) -> Result<Self, VdisaError> {
        if !(r > 0.0 && r < 1.0) {
            return Err(VdisaError::BadRatio(r));
        }
        Ok(EpsilonSchedule::Geometric { r })
    }

    pub fn epsilon_at(&self, k: usize) -> f64 {
        match *self {
            EpsilonSchedule::Exact => 0.0,
            EpsilonSchedule::Power { eps0, r } => eps0 / (k as f64 + 1.0).powf(r),
            EpsilonSchedule::Geometric { r } => r.powf(k as f64),
        }
    }

    pub fn summable(&self) -> bool {
        match *self {
            EpsilonSchedule::Exact => true,
            EpsilonSchedule::Power { eps0, r } => eps0 <= 0.0 || r > 1.0,
            EpsilonSchedule::Geometric { r } => r > 0.0 && r < 1.0,
        }
    }
}

/// Direction of an injected prox error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    /// Along the caller's steering vector (V-DISA passes `−y₂ᵢ`).
    Adversarial,
    /// Uniform on the sphere, from a seeded stream.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InexactProxStrategy {
    Exact,
    /// `x̃ = prox_{τg}(u + τd′)` with `‖d′‖ = ε`, which certifies `d = d′`.
    Injected(Direction),
    /// Proximal-gradient inner loop on `g(x) + ‖x − u‖²/(2τ)`, capped at
    /// `10·p` iterations.
    Iterative,
}

/// An approximate prox together with its error witness.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxCertificate {
    pub point: DVector<f64>,
    pub residual_bound: f64,
    /// `d ∈ ∂g(x̃) + (x̃ − u)/τ`.
    pub witness: DVector<f64>,
}

fn unit_or_e1(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(v.len());
        if !e.is_empty() {
            e[0] = 1.0;
        }
        e
    }
}

/// Approximates `prox_{τg}(u)` to certified accuracy `ε`.
pub fn approximate_prox(
    g: &ProxOperator,
    u: &DVector<f64>,
    tau: f64,
    eps: f64,
    strategy: InexactProxStrategy,
    steer: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ProxCertificate, VdisaError> {
    let exact = || ProxCertificate {
        point: g.prox(u, tau),
        residual_bound: 0.0,
        witness: DVector::zeros(u.len()),
    };
    if eps <= 0.0 || u.is_empty() {
        return Ok(exact());
    }
    match strategy {
        InexactProxStrategy::Exact => Ok(exact()),
        InexactProxStrategy::Injected(dir) => {
            let unit = match dir {
                Direction::Adversarial => unit_or_e1(steer),
                Direction::Random { .. } => {
                    let z = DVector::from_fn(u.len(), |_, _| StandardNormal.sample(rng));
                    unit_or_e1(&z)
                }
            };
            let d = unit * eps;
            Ok(ProxCertificate {
                point: g.prox(&(u + &d * tau), tau),
                residual_bound: eps,
                witness: d,
            })
        }
        InexactProxStrategy::Iterative => {
            // Contraction factor 1 − α/τ = 0.1 per inner step.
            let alpha = 0.9 * tau;
            let coeff = 1.0 / alpha - 1.0 / tau;
            // Below this the witness is rounding noise.
            let floor = 1e-14 * (1.0 + u.norm()) / tau;
            let target = eps.max(floor);
            let cap = 10 * u.len();
            let mut x = u.clone();
            let mut reached = f64::INFINITY;
            for _ in 0..cap {
                let next = g.prox(&(&x - (&x - u) * (alpha / tau)), alpha);
                let d = (&x - &next) * coeff;
                reached = d.norm();
                if reached <= target {
                    return Ok(ProxCertificate {
                        point: next,
                        residual_bound: eps,
                        witness: d,
                    });
                }
                x = next;
            }
            Err(VdisaError::InnerSolverStall {
                iterations: cap,
                reached,
                target,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct VdisaEngine {
    pub core: DisaEngine,
    pub schedule: EpsilonSchedule,
    pub strategy: InexactProxStrategy,
    /// Iterations taken so far; indexes the schedule.
    pub k: usize,
    /// Witnesses from the last iteration.
    pub last_d: Vec<DVector<f64>>,
    rng: ChaCha8Rng,
}

impl VdisaEngine {
    pub fn new(
        problem: &ProblemInstance,
        w: &MixingMatrix,
        steps: StepSizes,
        schedule: EpsilonSchedule,
        strategy: InexactProxStrategy,
    ) -> Result<Self, Error> {
        let core = DisaEngine::new(problem, w, steps)?;
        let seed = match strategy {
            InexactProxStrategy::Injected(Direction::Random { seed }) => seed,
            _ => 0,
        };
        Ok(VdisaEngine {
            core,
            schedule,
            strategy,
            k: 0,
            last_d: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Half step with one approximate prox, exchange, dual step, additive
    /// primal correction.
    pub fn vdisa_iterate(&mut self) -> Result<StepInfo, Error> {
        let eps = self.schedule.epsilon_at(self.k);
        let e = &mut self.core;
        let before = e.state.point();
        let m = e.problem.agent_count();
        e.grad.clear();
        self.last_d.clear();
        let mut measured: f64 = 0.0;
        for i in 0..m {
            let a = &e.problem.agents[i];
            let tau = e.steps.tau()[i];
            let s = &mut e.state;
            let g = a.f.gradient(&s.x1[i]);
            s.xbar1[i] = &s.x1[i] - (&g + &s.y1_tilde[i] + a.u.tr_mul(&s.y2[i])) * tau;
            let u = &s.x2[i] + &s.y2[i] * tau;
            let cert = approximate_prox(&a.g, &u, tau, eps, self.strategy, &-&s.y2[i], &mut self.rng)?;
            let r = check_prox_optimality(&a.g, &s.x2[i], tau, &cert.point, &s.y2[i]).unwrap_or(f64::NAN);
            measured = measured.max(r);
            s.xbar2[i] = cert.point;
            self.last_d.push(cert.witness);
            e.grad.push(g);
        }
        e.counters.gradient_calls += m as u64;
        e.counters.prox_calls += m as u64;

        let mixed = gossip_round(&e.w, &e.state.xbar1)?;
        e.counters.gossip_rounds += 1;
        let half_beta = 0.5 * e.steps.beta();
        for i in 0..m {
            let a = &e.problem.agents[i];
            let s = &mut e.state;
            s.y1_tilde[i] += (&s.xbar1[i] - &mixed[i]) * half_beta;
            let r = &a.u * &s.xbar1[i] - &s.xbar2[i];
            s.y2[i] += e.pc.apply_s_inverse(i, &r);
        }

        let kkt_norm = e.track_kkt.then(|| {
            kkt_element(
                &e.problem,
                &e.w,
                &e.steps,
                &KktInputs {
                    before: &before,
                    grad_before: &e.grad,
                    xbar1: &e.state.xbar1,
                    xbar2: &e.state.xbar2,
                    y1t_next: &e.state.y1_tilde,
                    y2_next: &e.state.y2,
                    d: Some(&self.last_d),
                },
            )
            .norm()
        });

        for i in 0..m {
            let a = &e.problem.agents[i];
            let tau = e.steps.tau()[i];
            let s = &mut e.state;
            let dy1 = &before.y1t[i] - &s.y1_tilde[i];
            let dy2 = &before.y2[i] - &s.y2[i];
            s.x1[i] = &s.xbar1[i] + (dy1 + a.u.tr_mul(&dy2)) * tau;
            s.x2[i] = &s.xbar2[i] - dy2 * tau;
        }
        self.k += 1;
        Ok(StepInfo {
            kkt_norm,
            eps: Some(eps),
            cert: Some(measured),
        })
    }
}

impl Solver for VdisaEngine {
    fn name(&self) -> &'static str {
        "vdisa"
    }

    fn step(&mut self) -> Result<StepInfo, Error> {
        self.vdisa_iterate()
    }

    fn x1(&self) -> &[DVector<f64>] {
        &self.core.state.x1
    }

    fn counters(&self) -> Counters {
        self.core.counters
    }

    fn point(&self) -> Option<Iterate> {
        Some(self.core.state.point())
    }

    fn half_point(&self) -> Option<Iterate> {
        Some(self.core.state.half_point())
    }
}

pub fn vdisa_run(
    engine: &mut VdisaEngine,
    stop: &StoppingRule,
    reference: Option<&RunReference>,
) -> Result<Trace, RunError> {
    let problem = engine.core.problem.clone();
    let w = engine.core.w.clone();
    run(engine, &problem, &w, stop, reference)
}
