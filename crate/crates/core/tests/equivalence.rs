mod common;

use std::sync::Arc;

use common::oracles::{compact_disa, nids_recursion};
use disa_core::linalg;
use disa_core::prelude::*;
use disa_core::problems::{AgentProblem, InstanceMeta, LeastSquares};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn smooth_instance(m: usize, n: usize, seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let agents = (0..m)
        .map(|_| {
            let q = draw(2 * n, n);
            let b = draw(2 * n, 1).column(0).into_owned();
            AgentProblem {
                f: Arc::new(LeastSquares::new(q, b).unwrap()),
                g: ProxOperator::Zero,
                u: DMatrix::zeros(0, n),
            }
        })
        .collect();
    ProblemInstance::new(agents, InstanceMeta::default()).unwrap()
}

#[test]
fn per_agent_matches_compact_form() {
    for (m, n, topo) in [(3, 10, Topology::Line), (4, 30, Topology::Cycle), (4, 12, Topology::Star)] {
        let inst = make_generalized_lasso_with(LassoSpec {
            m,
            n,
            u_rows: 5,
            seed: 9,
            u_scale: 3.0,
        })
        .unwrap();
        let w = metropolis_weights(&build_graph(topo, m).unwrap());
        let steps = default_step_sizes(&inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
        let oracle = compact_disa(&inst, &w, steps.tau(), steps.beta(), 50);
        let mut e = DisaEngine::new(&inst, &w, steps).unwrap();
        for (k, (x1, y1t)) in oracle.iter().enumerate() {
            e.disa_iterate().unwrap();
            let scale = 1.0 + x1.amax();
            let dx = (linalg::stack(&e.state.x1) - x1).amax();
            let dy = (linalg::stack(&e.state.y1_tilde) - y1t).amax();
            assert!(dx <= 1e-11 * scale, "m={m} n={n} k={k}: x gap {dx}");
            assert!(dy <= 1e-11 * (1.0 + y1t.amax()), "m={m} n={n} k={k}: y gap {dy}");
        }
    }
}

#[test]
fn library_dense_form_matches_per_agent() {
    let inst = make_generalized_lasso(3, 8, 2, 10.0).unwrap();
    let w = metropolis_weights(&build_graph(Topology::Line, 3).unwrap());
    let steps = default_step_sizes(&inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let mut d = DenseDisa::new(&inst, &w, steps.clone()).unwrap();
    let mut e = DisaEngine::new(&inst, &w, steps).unwrap();
    for _ in 0..50 {
        d.compact_form_iterate();
        e.disa_iterate().unwrap();
    }
    assert!((linalg::stack(&d.x1()) - linalg::stack(&e.state.x1)).amax() < 1e-10);
    assert!((linalg::stack(&d.y2()) - linalg::stack(&e.state.y2)).amax() < 1e-10);
}

#[test]
fn smooth_case_reduces_to_nids() {
    for (m, n) in [(3, 10), (4, 30)] {
        let inst = smooth_instance(m, n, 5);
        let w = metropolis_weights(&build_graph(Topology::Cycle, m).unwrap());
        let tau = 1.0 / inst.lipschitz().iter().copied().fold(0.0, f64::max);
        let oracle = nids_recursion(&inst, &w, tau, 50);
        let mut e = DisaEngine::new(&inst, &w, StepSizes::unchecked(vec![tau; m], 1.0 / tau)).unwrap();
        let mut nids = Nids::new(&inst, &w, tau).unwrap();
        for (k, x) in oracle.iter().enumerate() {
            e.disa_iterate().unwrap();
            nids.iterate();
            let scale = 1.0 + x.amax();
            assert!((linalg::stack(&e.state.x1) - x).amax() <= 1e-11 * scale, "DISA k={k}");
            assert!((linalg::stack(&nids.x) - x).amax() <= 1e-11 * scale, "NIDS k={k}");
        }
    }
}

#[test]
fn nids_run_reaches_centralized_solution() {
    let inst = smooth_instance(3, 4, 8);
    let w = metropolis_weights(&build_graph(Topology::Cycle, 3).unwrap());
    // Centralized least squares: (Σ QᵢᵀQᵢ) x = Σ Qᵢᵀqᵢ, via the gradient at 0
    // and the Hessian recovered column by column.
    let n = 4;
    let grad0: DVector<f64> = inst.agents.iter().map(|a| a.f.gradient(&DVector::zeros(n))).sum();
    let hess = DMatrix::from_fn(n, n, |r, c| {
        let e = DVector::from_fn(n, |i, _| if i == c { 1.0 } else { 0.0 });
        inst.agents.iter().map(|a| a.f.gradient(&e)[r]).sum::<f64>() - grad0[r]
    });
    let x_star = hess.lu().solve(&(-grad0)).unwrap();
    let tau = 1.0 / inst.lipschitz().iter().copied().fold(0.0, f64::max);
    let reference = RunReference::primal(x_star);
    let t = nids_reference_run(&inst, &w, tau, &StoppingRule::relative_error(1e-10, 20_000), Some(&reference)).unwrap();
    assert!(t.meta.converged);
}
