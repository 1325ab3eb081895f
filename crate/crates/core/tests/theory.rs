mod common;

use common::oracles::{ols, prefix_sums};
use disa_core::metrics::{fejer_check, partial_sum_check, primal_dual_gap_bound_check, scaled_consensus};
use disa_core::prelude::*;
use disa_core::solver_core::{Iterate, MetricOperators};
use disa_core::vdisa::Direction;
use disa_core::{linalg, Error};

struct Setup {
    inst: ProblemInstance,
    w: MixingMatrix,
    reference: ReferenceSolution,
}

fn setup(seed: u64) -> Setup {
    let inst = make_generalized_lasso_with(LassoSpec {
        m: 3,
        n: 30,
        u_rows: 3,
        seed,
        u_scale: 1.0,
    })
    .unwrap();
    let w = metropolis_weights(&build_graph(Topology::Line, 3).unwrap());
    let reference = reference_solution(&inst, &w, ReferenceOptions::default()).unwrap();
    Setup { inst, w, reference }
}

fn metric_reference(s: &Setup, steps: &StepSizes) -> RunReference {
    RunReference::with_metric(s.reference.x_star.clone(), s.reference.w_star.clone(), &s.inst, &s.w, steps).unwrap()
}

#[test]
fn fejer_and_partial_sums_hold() {
    for seed in [1, 2] {
        let s = setup(seed);
        let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
        let reference = metric_reference(&s, &steps);
        let mut e = DisaEngine::new(&s.inst, &s.w, steps).unwrap();
        let t = disa_run(&mut e, &StoppingRule::max_iterations(600), Some(&reference)).unwrap();
        let fejer = fejer_check(&t).unwrap();
        assert!(fejer.pass, "seed {seed}: {fejer:?}");
        let h0 = t.rows[0].h_dist.unwrap();
        let ps = partial_sum_check(&t, h0).unwrap();
        assert!(ps.pass && ps.slack > 0.0, "seed {seed}: {ps:?}");
    }
}

#[test]
fn starting_at_solution_gives_zero_partial_sums() {
    let s = setup(3);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let reference = metric_reference(&s, &steps);
    let state = disa_core::solver_core::PrimalDualState::from_iterate(&s.reference.w_star);
    let mut e = DisaEngine::with_state(&s.inst, &s.w, steps, state).unwrap();
    let t = disa_run(&mut e, &StoppingRule::max_iterations(20), Some(&reference)).unwrap();
    let h0 = t.rows[0].h_dist.unwrap();
    assert!(h0 < 1e-18);
    let ps = partial_sum_check(&t, h0).unwrap();
    assert!(ps.slack.abs() < 1e-15, "{ps:?}");
}

#[test]
fn kkt_partial_sums_level_off() {
    let s = setup(1);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let mut e = DisaEngine::new(&s.inst, &s.w, steps).unwrap();
    let t = disa_run(&mut e, &StoppingRule::max_iterations(2000), None).unwrap();
    let sq: Vec<f64> = t.kkt_series().unwrap().iter().map(|v| v * v).collect();
    let sums = prefix_sums(&sq);
    let (slope, _) = ols(&sums[99..]);
    assert!(slope * 1900.0 <= 1e-3 * sums[99], "slope {slope}, S_100 {}", sums[99]);
}

#[test]
fn gap_bound_under_strict_steps() {
    let s = setup(2);
    let l = s.inst.lipschitz();
    let tau: Vec<f64> = l.iter().map(|li| 0.9 / li).collect();
    let tmax = tau.iter().copied().fold(0.0, f64::max);
    let steps = validate_step_sizes(&l, &tau, 0.5 / tmax).unwrap();
    assert!(steps.strict());
    let u: Vec<_> = s.inst.agents.iter().map(|a| a.u.clone()).collect();
    let ops = MetricOperators::new(&s.inst, &s.w, &steps, &build_dual_preconditioner(&u, &steps).unwrap());
    let (m, n, p) = (3, 30, s.inst.map_dim);
    let mut e = DisaEngine::new(&s.inst, &s.w, steps.clone()).unwrap();
    let mut acc = Iterate::zeros(m, n, p);
    let ws = &s.reference.w_star;
    let probes = vec![
        (linalg::zeros(m, n), linalg::zeros(m, p)),
        (ws.y1t.clone(), ws.y2.clone()),
        (linalg::scale(&ws.y1t, 2.0), linalg::scale(&ws.y2, 2.0)),
    ];
    for k in 1..=400 {
        e.disa_iterate().unwrap();
        acc = acc.add(&e.state.half_point());
        if [1, 10, 100, 400].contains(&k) {
            let avg = acc.scale(1.0 / k as f64);
            let report =
                primal_dual_gap_bound_check(&s.inst, &steps, &ops, &avg, ws, &Iterate::zeros(m, n, p), &probes, k).unwrap();
            for r in report {
                assert!(r.pass, "k={k}: {r:?}");
            }
            assert!(scaled_consensus(&s.w, &avg.x1, k).is_finite());
        }
    }
}

#[test]
fn gap_check_refuses_relaxed_steps() {
    let s = setup(2);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let u: Vec<_> = s.inst.agents.iter().map(|a| a.u.clone()).collect();
    let ops = MetricOperators::new(&s.inst, &s.w, &steps, &build_dual_preconditioner(&u, &steps).unwrap());
    let z = Iterate::zeros(3, 30, s.inst.map_dim);
    assert!(primal_dual_gap_bound_check(&s.inst, &steps, &ops, &z, &z, &z, &[], 1).is_err());
}

#[test]
fn linear_tail_on_lasso() {
    let s = setup(1);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let mut e = DisaEngine::new(&s.inst, &s.w, steps).unwrap();
    let reference = RunReference::primal(s.reference.x_star.clone());
    let t = disa_run(&mut e, &StoppingRule::relative_error(1e-7, 50_000), Some(&reference)).unwrap();
    let fit = tail_linear_fit(&t.re_err_series().unwrap(), 0.3).unwrap();
    assert!(fit.r_squared > 0.98 && fit.rate < 1.0, "{fit:?}");
}

#[test]
fn vdisa_reaches_the_same_solution() {
    let s = setup(1);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let reference = RunReference::primal(s.reference.x_star.clone());
    let stop = StoppingRule::relative_error(1e-8, 50_000);
    for schedule in [EpsilonSchedule::Exact, EpsilonSchedule::power(1.0, 2.0).unwrap()] {
        let mut v = VdisaEngine::new(&s.inst, &s.w, steps.clone(), schedule, InexactProxStrategy::Iterative).unwrap();
        let t = vdisa_run(&mut v, &stop, Some(&reference)).unwrap();
        assert!(t.meta.converged);
        let avg = v.core.state.x1.iter().fold(nalgebra::DVector::zeros(30), |a, b| a + b) / 3.0;
        assert!((avg - &s.reference.x_star).norm() < 1e-6);
    }
}

#[test]
fn vdisa_quasi_fejer_constant_is_finite() {
    let s = setup(2);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    let reference = metric_reference(&s, &steps);
    let schedule = EpsilonSchedule::power(1.0, 2.0).unwrap();
    let mut v = VdisaEngine::new(
        &s.inst,
        &s.w,
        steps,
        schedule,
        InexactProxStrategy::Injected(Direction::Adversarial),
    )
    .unwrap();
    let t = vdisa_run(&mut v, &StoppingRule::max_iterations(300), Some(&reference)).unwrap();
    let h: Vec<f64> = t.h_dist_series().unwrap().iter().map(|v| v.sqrt()).collect();
    let psi = h
        .windows(2)
        .enumerate()
        .map(|(k, p)| (p[1] - p[0]) / schedule.epsilon_at(k))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(psi.is_finite() && psi < 1e3, "psi = {psi}");
    for r in &t.rows[1..] {
        assert!(r.cert.unwrap() <= r.eps.unwrap() + 1e-9);
    }
}

#[test]
fn relaxed_steps_are_not_strict() {
    let s = setup(1);
    let steps = default_step_sizes(&s.inst.lipschitz(), StepPolicy::LassoDefault).unwrap();
    assert!(!steps.strict());
    assert!(matches!(
        validate_step_sizes(&s.inst.lipschitz(), steps.tau(), 1.0 / steps.tau_max()),
        Err(disa_core::solver_core::StepError::StepSizeViolation { .. })
    ));
    let _: Option<Error> = None;
}
