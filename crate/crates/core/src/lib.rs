//! Dual inexact splitting for distributed composite optimization.
//!
//! A network of `m` agents cooperatively solves
//!
//! ```text
//! minimize  Σ_i f_i(x) + g_i(U_i x)
//! ```
//!
//! where `f_i` is smooth, `g_i` is proximable and `U_i` is a local linear map.
//! [`disa::DisaEngine`] runs the dual inexact splitting algorithm, whose
//! admissible step sizes do not depend on `‖U_i U_iᵀ‖`; [`vdisa::VdisaEngine`]
//! is the variant that tolerates approximate proximal evaluations. The
//! [`baselines`] module provides Condat-Vu, linearized ALM and NIDS for
//! comparison, and [`metrics`] holds the convergence diagnostics.
//!
//! ```
//! use disa_core::prelude::*;
//!
//! let problem = make_generalized_lasso(3, 8, 1, 1.0).unwrap();
//! let graph = build_graph(Topology::Line, 3).unwrap();
//! let w = metropolis_weights(&graph);
//! let steps = default_step_sizes(&problem.lipschitz(), StepPolicy::LassoDefault).unwrap();
//! let mut engine = DisaEngine::new(&problem, &w, steps).unwrap();
//! let trace = run(&mut engine, &problem, &w, &StoppingRule::max_iterations(100), None).unwrap();
//! assert_eq!(trace.rows.len(), 101);
//! ```

pub mod baselines;
pub mod disa;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod problems;
pub mod prox;
pub mod run;
pub mod solver_core;
pub mod vdisa;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] network::NetworkError),
    #[error(transparent)]
    Prox(#[from] prox::ProxError),
    #[error(transparent)]
    Problem(#[from] problems::ProblemError),
    #[error(transparent)]
    Step(#[from] solver_core::StepError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Vdisa(#[from] vdisa::VdisaError),
    #[error("dense verification needs m(n+p) <= {limit}, got {size}")]
    SizeGuard { size: usize, limit: usize },
    #[error("no convergence within {iterations} iterations (residual {residual:e})")]
    BudgetExceeded { iterations: usize, residual: f64 },
    #[error("{0}")]
    Invalid(String),
}

pub mod prelude {
    pub use crate::baselines::{condat_vu_run, lalm_run, nids_reference_run, CondatVu, Lalm, Nids, ReformulatedProblem};
    pub use crate::disa::{disa_run, DenseDisa, DisaEngine};
    pub use crate::metrics::{relative_error, tail_linear_fit, Trace, TraceRow};
    pub use crate::network::{
        build_graph, consensus_violation, gossip_round, metropolis_weights, validate_mixing_matrix, Graph,
        MixingMatrix, Topology,
    };
    pub use crate::problems::{
        make_distributed_logistic, make_generalized_lasso, make_generalized_lasso_with, reference_solution,
        LassoSpec, ProblemInstance, ReferenceOptions, ReferenceSolution,
    };
    pub use crate::prox::ProxOperator;
    pub use crate::run::{run, Criterion, RunError, RunReference, Solver, StoppingRule};
    pub use crate::solver_core::{
        build_dual_preconditioner, default_step_sizes, validate_step_sizes, StepPolicy, StepSizes,
    };
    pub use crate::vdisa::{vdisa_run, EpsilonSchedule, InexactProxStrategy, VdisaEngine};
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/prox.md")]
    mod prox {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/disa.md")]
    mod disa {}
    #[doc = include_str!("../../../book/src/vdisa.md")]
    mod vdisa {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
