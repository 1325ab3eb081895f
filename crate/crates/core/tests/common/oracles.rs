// Independent reference computations for the integration and acceptance
// tests. Nothing here calls into the solver code paths under test; proxes are
// recomputed from `g.value` alone by derivative-free minimization.

#![allow(dead_code)]

use disa_core::network::MixingMatrix;
use disa_core::problems::ProblemInstance;
use disa_core::prox::ProxOperator;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimizer of a convex (possibly extended-valued) `f` on `[lo, hi]`. The
/// returned point is always one where `f` was evaluated, so it stays inside
/// the domain of an indicator.
pub fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        a
    } else {
        b
    }
}

fn prox_objective(g: &ProxOperator, v: &DVector<f64>, t: f64, x: &DVector<f64>) -> f64 {
    g.value(x) + (x - v).norm_squared() / (2.0 * t)
}

fn bracket(v: &DVector<f64>) -> f64 {
    20.0 + 2.0 * v.amax()
}

/// `prox_{tg}(v)` for `v ∈ R²` by nested golden-section search; works for any
/// convex `g`, separable or not.
pub fn prox_oracle_2d(g: &ProxOperator, v: &DVector<f64>, t: f64) -> DVector<f64> {
    assert_eq!(v.len(), 2);
    let r = bracket(v);
    let inner = |x0: f64| {
        let x1 = golden(
            |x1| prox_objective(g, v, t, &DVector::from_vec(vec![x0, x1])),
            v[1] - r,
            v[1] + r,
            1e-12,
        );
        (x1, prox_objective(g, v, t, &DVector::from_vec(vec![x0, x1])))
    };
    let x0 = golden(|x0| inner(x0).1, v[0] - r, v[0] + r, 1e-12);
    DVector::from_vec(vec![x0, inner(x0).0])
}

/// `prox_{tg}(v)` for coordinate-separable `g` by one golden-section sweep.
pub fn prox_oracle_separable(g: &ProxOperator, v: &DVector<f64>, t: f64) -> DVector<f64> {
    let r = bracket(v);
    let mut x = v.clone();
    for i in 0..v.len() {
        let xi = golden(
            |s| {
                let mut y = x.clone();
                y[i] = s;
                prox_objective(g, v, t, &y)
            },
            v[i] - r,
            v[i] + r,
            1e-12,
        );
        x[i] = xi;
    }
    x
}

/// Symmetric square root by eigendecomposition, negative eigenvalues clipped.
pub fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn kron_eye(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let m = a.nrows();
    DMatrix::from_fn(m * n, m * n, |r, c| if r % n == c % n { a[(r / n, c / n)] } else { 0.0 })
}

/// Compact DISA on explicit stacked matrices. Returns `(x₁ᵏ, √V y₁ᵏ)` stacked,
/// for `k = 1..=iters`.
pub fn compact_disa(
    problem: &ProblemInstance,
    w: &MixingMatrix,
    tau: &[f64],
    beta: f64,
    iters: usize,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let (m, n, p) = (problem.agent_count(), problem.primal_dim, problem.map_dim);
    let (nx, ny) = (m * (n + p), m * (n + p));
    let half_lap = (DMatrix::identity(m, m) - w.dense()) * 0.5;
    let sv = kron_eye(&sqrtm(&half_lap), n);
    let mut b = DMatrix::zeros(ny, nx);
    b.view_mut((0, 0), (m * n, m * n)).copy_from(&sv);
    let tmax = tau.iter().copied().fold(0.0, f64::max);
    let mut q = DMatrix::zeros(ny, ny);
    for k in 0..m * n {
        q[(k, k)] = 1.0 / beta;
    }
    for (i, a) in problem.agents.iter().enumerate() {
        b.view_mut((m * n + i * p, i * n), (p, n)).copy_from(&a.u);
        for k in 0..p {
            b[(m * n + i * p + k, m * n + i * p + k)] = -1.0;
        }
        let ti = tau[i];
        let c = ti * (1.0 - tmax * beta + ti * beta) / (1.0 - tmax * beta);
        let s = DMatrix::identity(p, p) * (2.0 * ti) + &a.u * a.u.transpose() * c;
        q.view_mut((m * n + i * p, m * n + i * p), (p, p)).copy_from(&s);
    }
    let q_inv = q.try_inverse().expect("Q is positive definite");
    let mut gamma = DVector::zeros(nx);
    for i in 0..m {
        gamma.rows_mut(i * n, n).fill(tau[i]);
        gamma.rows_mut(m * n + i * p, p).fill(tau[i]);
    }
    let grad = |x: &DVector<f64>| {
        let mut g = DVector::zeros(nx);
        for (i, a) in problem.agents.iter().enumerate() {
            g.rows_mut(i * n, n).copy_from(&a.f.gradient(&x.rows(i * n, n).into_owned()));
        }
        g
    };
    let prox = |mut v: DVector<f64>| {
        for (i, a) in problem.agents.iter().enumerate() {
            let seg = v.rows(m * n + i * p, p).into_owned();
            v.rows_mut(m * n + i * p, p).copy_from(&a.g.prox(&seg, tau[i]));
        }
        v
    };
    let mut x = DVector::zeros(nx);
    let mut y = DVector::zeros(ny);
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let base = &x - grad(&x).component_mul(&gamma);
        let xbar = prox(&base - (b.transpose() * &y).component_mul(&gamma));
        y += &q_inv * (&b * &xbar);
        x = prox(&base - (b.transpose() * &y).component_mul(&gamma));
        let y1t = &sv * y.rows(0, m * n);
        out.push((x.rows(0, m * n).into_owned(), y1t));
    }
    out
}

/// `x¹ = W̃(x⁰ − τ∇F(x⁰))`, `xᵏ⁺¹ = W̃(2xᵏ − xᵏ⁻¹ + τ∇F(xᵏ⁻¹) − τ∇F(xᵏ))`
/// from `x⁰ = 0`, stacked; returns `x¹..x^iters`.
pub fn nids_recursion(problem: &ProblemInstance, w: &MixingMatrix, tau: f64, iters: usize) -> Vec<DVector<f64>> {
    let (m, n) = (problem.agent_count(), problem.primal_dim);
    let wt = kron_eye(&((DMatrix::identity(m, m) + w.dense()) * 0.5), n);
    let grad = |x: &DVector<f64>| {
        let mut g = DVector::zeros(m * n);
        for (i, a) in problem.agents.iter().enumerate() {
            g.rows_mut(i * n, n).copy_from(&a.f.gradient(&x.rows(i * n, n).into_owned()));
        }
        g
    };
    let x0 = DVector::zeros(m * n);
    let mut prev = x0.clone();
    let mut gprev = grad(&x0);
    let mut cur = &wt * (&x0 - &gprev * tau);
    let mut out = vec![cur.clone()];
    while out.len() < iters {
        let gcur = grad(&cur);
        let next = &wt * (&cur * 2.0 - &prev + (&gprev - &gcur) * tau);
        prev = std::mem::replace(&mut cur, next);
        gprev = gcur;
        out.push(cur.clone());
    }
    out
}

/// `S_K = Σ_{k≤K} aₖ`, returned for every `K`.
pub fn prefix_sums(a: &[f64]) -> Vec<f64> {
    a.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Ordinary least-squares slope and `R²` of `y` against `0..len`.
pub fn ols(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
        syy += (v - my) * (v - my);
    }
    let slope = sxy / sxx;
    (slope, if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) })
}

/// `prox_{βg*}(v)` from the closed-form conjugate of each shipped operator.
pub fn conjugate_prox(g: &ProxOperator, v: &DVector<f64>, beta: f64) -> DVector<f64> {
    match g {
        // g* = δ{0}.
        ProxOperator::Zero => DVector::zeros(v.len()),
        // g* = δ{‖s‖∞ ≤ ν}.
        ProxOperator::L1 { weight } => v.map(|s| s.clamp(-weight, *weight)),
        // g* = δ{‖s‖₂ ≤ ν}.
        ProxOperator::Euclidean { weight } => {
            let n = v.norm();
            if n <= *weight {
                v.clone()
            } else {
                v * (weight / n)
            }
        }
        // g* = δ{‖s‖₁ ≤ ν}: project by bisection on the soft threshold.
        ProxOperator::Linf { weight } => {
            if v.lp_norm(1) <= *weight {
                return v.clone();
            }
            let excess = |th: f64| v.iter().map(|s| (s.abs() - th).max(0.0)).sum::<f64>() - weight;
            let (mut lo, mut hi) = (0.0, v.amax());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let th = 0.5 * (lo + hi);
            v.map(|s| s.signum() * (s.abs() - th).max(0.0))
        }
        // g*(s) = Σ (|sᵢ| − ν₁)₊² / (4ν₂).
        ProxOperator::ElasticNet { l1, l2 } => v.map(|s| {
            if s.abs() <= *l1 {
                s
            } else {
                s.signum() * (beta * l1 + 2.0 * l2 * s.abs()) / (beta + 2.0 * l2)
            }
        }),
        // g*(s) = Σ sᵢ on [−ν, 0]ⁿ.
        ProxOperator::Hinge { weight } => v.map(|s| (s - beta).clamp(-weight, 0.0)),
        // g*(s) = ⟨w, s⟩ on s ≥ 0.
        ProxOperator::BoxUpper { upper } => v.zip_map(upper, |s, w| (s - beta * w).max(0.0)),
        ProxOperator::Custom(_) => panic!("no closed-form conjugate for custom operators"),
    }
}
