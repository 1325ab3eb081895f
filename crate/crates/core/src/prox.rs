//! Proximal operators for the nonsmooth terms `g_i`.
//!
//! Every operator computes `prox_{t g}(v) = argmin_x g(x) + ‖x - v‖² / (2t)`
//! for a step `t > 0`. The weight of the regularizer (`ν` in `ν‖x‖₁`) lives in
//! the operator, so callers pass the raw step size as `t` and the effective
//! threshold is `t·ν`.
//!
//! Shipped operators also know their subdifferential well enough to measure
//! `dist(z, ∂g(p))`, which is what certifies approximate prox evaluations.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("operator `{0}` has no subdifferential description")]
    UnsupportedWitness(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Soft-thresholding: `sign(v_i)·max(|v_i| - λ, 0)`.
pub fn prox_l1(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    v.map(|x| soft(x, lambda))
}

fn soft(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Block soft-thresholding: `(1 - λ / max(‖v‖, λ))·v`.
pub fn prox_euclidean_norm(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = v.norm();
    if n <= lambda {
        return DVector::zeros(v.len());
    }
    v * (1.0 - lambda / n)
}

/// `v - λ·Π_{B₁}(v/λ)` where `Π_{B₁}` projects onto the unit l1 ball.
pub fn prox_linf(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    if v.lp_norm(1) <= lambda {
        return DVector::zeros(v.len());
    }
    let proj = project_l1_ball(&(v / lambda), 1.0);
    v - proj * lambda
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}` by sorting magnitudes.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    if v.lp_norm(1) <= radius {
        return v.clone();
    }
    let theta = simplex_threshold(v.iter().map(|x| x.abs()).collect(), radius);
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

// Threshold θ such that Σ max(a_i - θ, 0) = radius, for a_i ≥ 0 with Σ a_i > radius.
fn simplex_threshold(mut a: Vec<f64>, radius: f64) -> f64 {
    a.sort_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &aj) in a.iter().enumerate() {
        cumsum += aj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if aj > t {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Prox of `λ1‖x‖₁ + λ2‖x‖²`.
pub fn prox_elastic_net(v: &DVector<f64>, lambda1: f64, lambda2: f64) -> DVector<f64> {
    prox_l1(v, lambda1) / (1.0 + 2.0 * lambda2)
}

/// Prox of `λ·Σ max(0, 1 - x_i)`.
pub fn prox_hinge(v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    v.map(|x| {
        if x >= 1.0 {
            x
        } else if x <= 1.0 - lambda {
            x + lambda
        } else {
            1.0
        }
    })
}

/// Projection onto `{x : x ≤ w}`.
pub fn prox_box_upper(v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    v.zip_map(w, f64::min)
}

/// User-supplied nonsmooth term.
pub trait CustomProx: Send + Sync {
    fn name(&self) -> &str;
    fn prox(&self, v: &DVector<f64>, t: f64) -> DVector<f64>;
    fn value(&self, x: &DVector<f64>) -> f64;
    /// `dist(z, ∂g(p))`, or `None` to opt out of certification.
    fn subgradient_distance(&self, _p: &DVector<f64>, _z: &DVector<f64>) -> Option<f64> {
        None
    }
    fn has_witness(&self) -> bool {
        false
    }
}

/// A nonsmooth term `g` together with its prox.
#[derive(Clone)]
pub enum ProxOperator {
    /// `g ≡ 0`.
    Zero,
    /// `ν‖x‖₁`.
    L1 { weight: f64 },
    /// `ν‖x‖₂`.
    Euclidean { weight: f64 },
    /// `ν‖x‖∞`.
    Linf { weight: f64 },
    /// `ν₁‖x‖₁ + ν₂‖x‖²`.
    ElasticNet { l1: f64, l2: f64 },
    /// `ν·Σ max(0, 1 - x_i)`.
    Hinge { weight: f64 },
    /// Indicator of `{x : x ≤ w}`.
    BoxUpper { upper: DVector<f64> },
    Custom(Arc<dyn CustomProx>),
}

impl fmt::Debug for ProxOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxOperator::Zero => write!(f, "Zero"),
            ProxOperator::L1 { weight } => write!(f, "L1({weight})"),
            ProxOperator::Euclidean { weight } => write!(f, "Euclidean({weight})"),
            ProxOperator::Linf { weight } => write!(f, "Linf({weight})"),
            ProxOperator::ElasticNet { l1, l2 } => write!(f, "ElasticNet({l1}, {l2})"),
            ProxOperator::Hinge { weight } => write!(f, "Hinge({weight})"),
            ProxOperator::BoxUpper { upper } => write!(f, "BoxUpper(dim {})", upper.len()),
            ProxOperator::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

impl ProxOperator {
    pub fn name(&self) -> String {
        match self {
            ProxOperator::Zero => "zero".into(),
            ProxOperator::L1 { .. } => "l1".into(),
            ProxOperator::Euclidean { .. } => "l2".into(),
            ProxOperator::Linf { .. } => "linf".into(),
            ProxOperator::ElasticNet { .. } => "elastic_net".into(),
            ProxOperator::Hinge { .. } => "hinge".into(),
            ProxOperator::BoxUpper { .. } => "box_upper".into(),
            ProxOperator::Custom(c) => c.name().into(),
        }
    }

    /// `prox_{t g}(v)`.
    pub fn prox(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        match self {
            ProxOperator::Zero => v.clone(),
            ProxOperator::L1 { weight } => prox_l1(v, t * weight),
            ProxOperator::Euclidean { weight } => prox_euclidean_norm(v, t * weight),
            ProxOperator::Linf { weight } => prox_linf(v, t * weight),
            ProxOperator::ElasticNet { l1, l2 } => prox_elastic_net(v, t * l1, t * l2),
            ProxOperator::Hinge { weight } => prox_hinge(v, t * weight),
            ProxOperator::BoxUpper { upper } => prox_box_upper(v, upper),
            ProxOperator::Custom(c) => c.prox(v, t),
        }
    }

    /// `g(x)`; `+∞` outside the domain of an indicator.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            ProxOperator::Zero => 0.0,
            ProxOperator::L1 { weight } => weight * x.lp_norm(1),
            ProxOperator::Euclidean { weight } => weight * x.norm(),
            ProxOperator::Linf { weight } => weight * x.amax(),
            ProxOperator::ElasticNet { l1, l2 } => l1 * x.lp_norm(1) + l2 * x.norm_squared(),
            ProxOperator::Hinge { weight } => weight * x.iter().map(|&v| (1.0 - v).max(0.0)).sum::<f64>(),
            ProxOperator::BoxUpper { upper } => {
                if x.iter().zip(upper.iter()).all(|(a, b)| a <= b) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxOperator::Custom(c) => c.value(x),
        }
    }

    /// `dist(z, ∂g(p))`. Infinite when `p` is outside the domain of `g`.
    pub fn subgradient_distance(&self, p: &DVector<f64>, z: &DVector<f64>) -> Result<f64, ProxError> {
        if p.len() != z.len() {
            return Err(ProxError::DimensionMismatch {
                expected: p.len(),
                got: z.len(),
            });
        }
        let d = match self {
            ProxOperator::Zero => z.norm(),
            ProxOperator::L1 { weight } => l1_distance(p, z, *weight),
            ProxOperator::Euclidean { weight } => {
                let np = p.norm();
                if np == 0.0 {
                    (z.norm() - weight).max(0.0)
                } else {
                    (z - p * (weight / np)).norm()
                }
            }
            ProxOperator::Linf { weight } => linf_distance(p, z, *weight),
            ProxOperator::ElasticNet { l1, l2 } => l1_distance(p, &(z - p * (2.0 * l2)), *l1),
            ProxOperator::Hinge { weight } => p
                .iter()
                .zip(z.iter())
                .map(|(&pi, &zi)| {
                    let gap = if pi > 1.0 {
                        zi
                    } else if pi < 1.0 {
                        zi + weight
                    } else {
                        interval_gap(zi, -weight, 0.0)
                    };
                    gap * gap
                })
                .sum::<f64>()
                .sqrt(),
            ProxOperator::BoxUpper { upper } => {
                let mut acc = 0.0;
                for ((&pi, &zi), &wi) in p.iter().zip(z.iter()).zip(upper.iter()) {
                    if pi > wi {
                        return Ok(f64::INFINITY);
                    }
                    let gap = if pi < wi { zi } else { zi.min(0.0) };
                    acc += gap * gap;
                }
                acc.sqrt()
            }
            ProxOperator::Custom(c) => c
                .subgradient_distance(p, z)
                .ok_or_else(|| ProxError::UnsupportedWitness(c.name().to_string()))?,
        };
        Ok(d)
    }

    pub fn has_witness(&self) -> bool {
        match self {
            ProxOperator::Custom(c) => c.has_witness(),
            _ => true,
        }
    }
}

fn interval_gap(z: f64, lo: f64, hi: f64) -> f64 {
    if z < lo {
        lo - z
    } else if z > hi {
        z - hi
    } else {
        0.0
    }
}

fn l1_distance(p: &DVector<f64>, z: &DVector<f64>, weight: f64) -> f64 {
    p.iter()
        .zip(z.iter())
        .map(|(&pi, &zi)| {
            let gap = if pi == 0.0 {
                interval_gap(zi, -weight, weight)
            } else {
                zi - weight * pi.signum()
            };
            gap * gap
        })
        .sum::<f64>()
        .sqrt()
}

// ∂(ν‖·‖∞)(p) for p ≠ 0 is {s : supp s ⊆ A, sign s_i = sign p_i, Σ|s_i| = ν}
// with A the set of maximal-magnitude coordinates; at 0 it is the ν-l1 ball.
fn linf_distance(p: &DVector<f64>, z: &DVector<f64>, weight: f64) -> f64 {
    let top = p.amax();
    if top == 0.0 {
        let proj = project_l1_ball(z, weight);
        return (z - proj).norm();
    }
    let cut = top * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut active = Vec::new();
    for (&pi, &zi) in p.iter().zip(z.iter()) {
        if pi.abs() >= cut {
            active.push(pi.signum() * zi);
        } else {
            acc += zi * zi;
        }
    }
    let proj = project_simplex(&active, weight);
    acc += active.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    acc.sqrt()
}

// Projection onto {t ≥ 0, Σ t = radius}.
fn project_simplex(a: &[f64], radius: f64) -> Vec<f64> {
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &aj) in sorted.iter().enumerate() {
        cumsum += aj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if aj > t {
            theta = t;
        }
    }
    a.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `prox_{βg*}(v) = v - β·prox_{g/β}(v/β)` via the Moreau identity.
pub fn moreau_conjugate_prox(p: &ProxOperator, v: &DVector<f64>, beta: f64) -> DVector<f64> {
    v - p.prox(&(v / beta), 1.0 / beta) * beta
}

/// `dist((x + τ·y_shift - p)/τ, ∂g(p))`.
///
/// Zero exactly when `p = prox_{τg}(x + τ·y_shift)`.
pub fn check_prox_optimality(
    g: &ProxOperator,
    x: &DVector<f64>,
    tau: f64,
    p: &DVector<f64>,
    y_shift: &DVector<f64>,
) -> Result<f64, ProxError> {
    let z = (x + y_shift * tau - p) / tau;
    g.subgradient_distance(p, &z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn l1_examples() {
        assert_eq!(prox_l1(&v(&[2.0, -0.5]), 1.0), v(&[1.0, 0.0]));
        assert_eq!(prox_l1(&v(&[0.0]), 3.0), v(&[0.0]));
        assert_eq!(prox_l1(&v(&[3.0]), 1.0), v(&[2.0]));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(prox_euclidean_norm(&v(&[0.3, 0.4]), 1.0), v(&[0.0, 0.0]));
        let p = prox_euclidean_norm(&v(&[3.0, 4.0]), 1.0);
        assert!((p - v(&[2.4, 3.2])).amax() < 1e-15);
    }

    #[test]
    fn linf_examples() {
        assert_eq!(prox_linf(&v(&[0.2, -0.3]), 1.0), v(&[0.0, 0.0]));
        assert!((prox_linf(&v(&[2.0, 0.0]), 1.0) - v(&[1.0, 0.0])).amax() < 1e-15);
        // [3, 1] with λ = 1: projection of [3,1] onto B₁ is [1, 0].
        assert!((prox_linf(&v(&[3.0, 1.0]), 1.0) - v(&[2.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn elastic_net_examples() {
        let x = v(&[1.5, -0.2, 0.7]);
        assert_eq!(prox_elastic_net(&x, 0.4, 0.0), prox_l1(&x, 0.4));
        assert_eq!(prox_elastic_net(&v(&[1.0]), 0.0, 0.5), v(&[0.5]));
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(prox_hinge(&v(&[2.0]), 0.5), v(&[2.0]));
        assert_eq!(prox_hinge(&v(&[0.0]), 0.5), v(&[0.5]));
        assert_eq!(prox_hinge(&v(&[0.75]), 0.5), v(&[1.0]));
    }

    #[test]
    fn box_examples() {
        let w = v(&[1.0, 2.0]);
        assert_eq!(prox_box_upper(&v(&[0.5, -1.0]), &w), v(&[0.5, -1.0]));
        assert_eq!(prox_box_upper(&v(&[3.0, 2.5]), &w), v(&[1.0, 2.0]));
    }

    #[test]
    fn conjugate_of_l1_is_clamp() {
        let g = ProxOperator::L1 { weight: 1.0 };
        let x = v(&[2.5, -0.3, -7.0, 1.0]);
        let c = moreau_conjugate_prox(&g, &x, 0.7);
        assert!((c - v(&[1.0, -0.3, -1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn conjugate_of_zero_is_zero() {
        let c = moreau_conjugate_prox(&ProxOperator::Zero, &v(&[4.0, -1.0]), 2.0);
        assert_eq!(c, v(&[0.0, 0.0]));
    }

    #[test]
    fn exact_prox_has_zero_residual() {
        let ops = [
            ProxOperator::Zero,
            ProxOperator::L1 { weight: 0.8 },
            ProxOperator::Euclidean { weight: 0.5 },
            ProxOperator::Linf { weight: 1.3 },
            ProxOperator::ElasticNet { l1: 0.3, l2: 0.2 },
            ProxOperator::Hinge { weight: 1.0 },
            ProxOperator::BoxUpper { upper: v(&[0.1, 0.0, 5.0]) },
        ];
        let x = v(&[1.2, -0.4, 0.9]);
        let y = v(&[0.3, 0.1, -2.0]);
        let tau = 0.6;
        for g in &ops {
            let p = g.prox(&(&x + &y * tau), tau);
            let r = check_prox_optimality(g, &x, tau, &p, &y).unwrap();
            assert!(r < 1e-10, "{g:?}: residual {r}");
        }
    }

    #[test]
    fn zero_residual_is_plain_norm() {
        let x = v(&[1.0, 2.0]);
        let y = v(&[0.5, 0.0]);
        let p = v(&[0.0, 0.0]);
        let r = check_prox_optimality(&ProxOperator::Zero, &x, 2.0, &p, &y).unwrap();
        assert!((r - (&x + &y * 2.0).norm() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perturbed_prox_residual_scales_with_delta() {
        // Smooth region of the l1 norm: every coordinate stays away from zero.
        let g = ProxOperator::L1 { weight: 0.5 };
        let x = v(&[3.0, -2.0]);
        let y = v(&[0.0, 0.0]);
        let tau = 0.5;
        let p = g.prox(&x, tau);
        let delta = v(&[1e-3, -2e-3]);
        let r = check_prox_optimality(&g, &x, tau, &(&p + &delta), &y).unwrap();
        assert!((r - delta.norm() / tau).abs() < 1e-12);
    }

    struct Opaque;
    impl CustomProx for Opaque {
        fn name(&self) -> &str {
            "opaque"
        }
        fn prox(&self, v: &DVector<f64>, _t: f64) -> DVector<f64> {
            v.clone()
        }
        fn value(&self, _x: &DVector<f64>) -> f64 {
            0.0
        }
    }

    #[test]
    fn custom_without_witness_is_unsupported() {
        let g = ProxOperator::Custom(Arc::new(Opaque));
        assert!(!g.has_witness());
        let x = v(&[1.0]);
        assert!(matches!(
            check_prox_optimality(&g, &x, 1.0, &x, &x),
            Err(ProxError::UnsupportedWitness(_))
        ));
    }

    #[test]
    fn box_residual_infinite_when_infeasible() {
        let g = ProxOperator::BoxUpper { upper: v(&[0.0]) };
        assert!(g.subgradient_distance(&v(&[1.0]), &v(&[0.0])).unwrap().is_infinite());
    }

    #[test]
    fn l1_ball_projection_lands_on_sphere() {
        let p = project_l1_ball(&v(&[3.0, -1.0, 0.5]), 2.0);
        assert!((p.lp_norm(1) - 2.0).abs() < 1e-14);
    }
}
