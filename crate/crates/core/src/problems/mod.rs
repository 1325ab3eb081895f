//! Per-agent problem data and instance generators.
//!
//! Agent `i` owns a smooth loss `f_i`, a nonsmooth term `g_i` and a linear map
//! `U_i`; the network minimizes `Σ_i f_i(x) + g_i(U_i x)` over a shared `x`.

mod libsvm;
mod reference;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::prox::ProxOperator;

pub use libsvm::{parse_libsvm, LibsvmData};
pub use reference::{reference_solution, ReferenceOptions, ReferenceSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("labels must be -1 or +1, found {0}")]
    BadLabels(f64),
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: feature index {index} must be positive")]
    IndexError { line: usize, index: i64 },
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),
    #[error("cannot split {samples} samples over {agents} agents")]
    TooFewSamples { samples: usize, agents: usize },
}

/// Smooth, convex, `L`-smooth loss.
pub trait SmoothLoss: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn lipschitz(&self) -> f64;
    fn dim(&self) -> usize;
}

/// `½‖Qx − q‖²`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q_mat: DMatrix<f64>,
    q_vec: DVector<f64>,
    gram: DMatrix<f64>,
    qt_q: DVector<f64>,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(q_mat: DMatrix<f64>, q_vec: DVector<f64>) -> Result<Self, ProblemError> {
        if q_mat.nrows() != q_vec.len() {
            return Err(ProblemError::Dimensions(format!(
                "Q has {} rows but q has length {}",
                q_mat.nrows(),
                q_vec.len()
            )));
        }
        let lipschitz = lipschitz_estimate(&q_mat)?;
        let gram = q_mat.transpose() * &q_mat;
        let qt_q = q_mat.transpose() * &q_vec;
        Ok(LeastSquares {
            q_mat,
            q_vec,
            gram,
            qt_q,
            lipschitz,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q_mat
    }
}

impl SmoothLoss for LeastSquares {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.q_mat * x - &self.q_vec).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gram * x - &self.qt_q
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn dim(&self) -> usize {
        self.q_mat.ncols()
    }
}

/// `(c/2)‖x − center‖²`.
#[derive(Debug, Clone)]
pub struct SquaredDistance {
    pub center: DVector<f64>,
    pub curvature: f64,
}

impl SmoothLoss for SquaredDistance {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.curvature * (x - &self.center).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.center) * self.curvature
    }

    fn lipschitz(&self) -> f64 {
        self.curvature
    }

    fn dim(&self) -> usize {
        self.center.len()
    }
}

/// `(1/s)·Σ_j ln(1 + exp(−b_j⟨a_j, x⟩)) + (ridge/2)‖x‖²` over `s` samples.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    ridge: f64,
    lipschitz: f64,
}

impl Logistic {
    /// `features` holds one sample per row.
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, ridge: f64) -> Result<Self, ProblemError> {
        if features.nrows() != labels.len() || labels.is_empty() {
            return Err(ProblemError::Dimensions(format!(
                "{} sample rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(ProblemError::BadLabels(bad));
        }
        let norm_sq = if features.iter().all(|&v| v == 0.0) {
            0.0
        } else {
            lipschitz_estimate(&features)?
        };
        let lipschitz = norm_sq / (4.0 * labels.len() as f64) + ridge;
        Ok(Logistic {
            features,
            labels,
            ridge,
            lipschitz,
        })
    }
}

// ln(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SmoothLoss for Logistic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let margins = &self.features * x;
        let s = self.labels.len() as f64;
        let loss: f64 = margins
            .iter()
            .zip(self.labels.iter())
            .map(|(&z, &b)| softplus(-b * z))
            .sum();
        loss / s + 0.5 * self.ridge * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let margins = &self.features * x;
        let s = self.labels.len() as f64;
        // d/dz ln(1 + e^{−bz}) = −b·σ(−bz)
        let weights = DVector::from_iterator(
            margins.len(),
            margins
                .iter()
                .zip(self.labels.iter())
                .map(|(&z, &b)| -b * sigmoid(-b * z) / s),
        );
        self.features.tr_mul(&weights) + x * self.ridge
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Data and oracles held by one agent.
#[derive(Clone)]
pub struct AgentProblem {
    pub f: Arc<dyn SmoothLoss>,
    pub g: ProxOperator,
    /// `p × n` linear map.
    pub u: DMatrix<f64>,
}

impl fmt::Debug for AgentProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentProblem")
            .field("L", &self.f.lipschitz())
            .field("g", &self.g)
            .field("u", &self.u.shape())
            .finish()
    }
}

impl AgentProblem {
    pub fn lipschitz(&self) -> f64 {
        self.f.lipschitz()
    }

    /// `f_i(x) + g_i(U_i x)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x) + self.g.value(&(&self.u * x))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceMeta {
    pub name: String,
    pub seed: u64,
    pub u_scale: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub agents: Vec<AgentProblem>,
    pub primal_dim: usize,
    pub map_dim: usize,
    pub meta: InstanceMeta,
}

impl ProblemInstance {
    pub fn new(agents: Vec<AgentProblem>, meta: InstanceMeta) -> Result<Self, ProblemError> {
        let first = agents
            .first()
            .ok_or_else(|| ProblemError::Dimensions("instance has no agents".into()))?;
        let (p, n) = first.u.shape();
        for (i, a) in agents.iter().enumerate() {
            if a.u.shape() != (p, n) || a.f.dim() != n {
                return Err(ProblemError::Dimensions(format!(
                    "agent {i}: U is {:?} and f has dimension {}, expected U {:?}",
                    a.u.shape(),
                    a.f.dim(),
                    (p, n)
                )));
            }
            if let ProxOperator::BoxUpper { upper } = &a.g {
                if upper.len() != p {
                    return Err(ProblemError::Dimensions(format!("agent {i}: box bound has wrong length")));
                }
            }
        }
        Ok(ProblemInstance {
            agents,
            primal_dim: n,
            map_dim: p,
            meta,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn lipschitz(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.lipschitz()).collect()
    }

    /// `Σ_i f_i(x) + g_i(U_i x)` at a common point.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.agents.iter().map(|a| a.objective(x)).sum()
    }

    /// `Σ_i f_i(x_i) + g_i(U_i x_i)` for per-agent copies.
    pub fn objective_blocks(&self, x1: &[DVector<f64>]) -> f64 {
        self.agents.iter().zip(x1).map(|(a, x)| a.objective(x)).sum()
    }

    /// `max_i ‖U_i U_iᵀ‖`.
    pub fn max_uut_norm(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| {
                if a.u.iter().all(|&v| v == 0.0) || a.u.nrows() == 0 {
                    0.0
                } else {
                    crate::linalg::sym_norm(&(&a.u * a.u.transpose()))
                }
            })
            .fold(0.0, f64::max)
    }
}

const POWER_CAP: usize = 200_000;

/// Largest eigenvalue of `MᵀM` by power iteration.
///
/// Stops once the eigen-residual `‖MᵀMv − λv‖` falls below `1e-11·λ`.
pub fn lipschitz_estimate(m: &DMatrix<f64>) -> Result<f64, ProblemError> {
    let n = m.ncols();
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return Err(ProblemError::ZeroMatrix);
    }
    let gram = if m.nrows() < n { None } else { Some(m.tr_mul(m)) };
    let apply = |v: &DVector<f64>| match &gram {
        Some(g) => g * v,
        None => m.tr_mul(&(m * v)),
    };
    // Deterministic start with no symmetry that could hide the top direction.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v.normalize_mut();
    for _ in 0..POWER_CAP {
        let w = apply(&v);
        let lambda = v.dot(&w);
        let residual = (&w - &v * lambda).norm();
        if residual <= 1e-11 * lambda.abs() {
            return Ok(lambda);
        }
        let norm = w.norm();
        if norm == 0.0 {
            // Start vector fell in the null space; restart on a basis vector.
            v = DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 });
            continue;
        }
        v = w / norm;
    }
    Err(ProblemError::NoConvergence(POWER_CAP))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill order is part of the determinism contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Generalized LASSO instance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoSpec {
    pub m: usize,
    pub n: usize,
    /// Rows of each `U_i`.
    pub u_rows: usize,
    pub seed: u64,
    pub u_scale: f64,
}

impl LassoSpec {
    pub fn new(m: usize, n: usize, seed: u64, u_scale: f64) -> Self {
        LassoSpec {
            m,
            n,
            u_rows: 20,
            seed,
            u_scale,
        }
    }
}

/// `f_i = ½‖Q_i x − q_i‖²`, `g_i = ‖·‖₁` with Gaussian `Q_i ∈ R^{2n×n}`,
/// `q_i ∈ R^{2n}` and `U_i = u_scale·G_i/√n`.
pub fn make_generalized_lasso(m: usize, n: usize, seed: u64, u_scale: f64) -> Result<ProblemInstance, ProblemError> {
    make_generalized_lasso_with(LassoSpec::new(m, n, seed, u_scale))
}

pub fn make_generalized_lasso_with(spec: LassoSpec) -> Result<ProblemInstance, ProblemError> {
    let LassoSpec {
        m,
        n,
        u_rows,
        seed,
        u_scale,
    } = spec;
    if m == 0 || n == 0 {
        return Err(ProblemError::Dimensions("m and n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(m);
    for _ in 0..m {
        let q_mat = gaussian_matrix(&mut rng, 2 * n, n);
        let q_vec = gaussian_matrix(&mut rng, 2 * n, 1).column(0).into_owned();
        let g = gaussian_matrix(&mut rng, u_rows, n);
        agents.push(AgentProblem {
            f: Arc::new(LeastSquares::new(q_mat, q_vec)?),
            g: ProxOperator::L1 { weight: 1.0 },
            u: g * (u_scale / (n as f64).sqrt()),
        });
    }
    ProblemInstance::new(
        agents,
        InstanceMeta {
            name: "generalized_lasso".into(),
            seed,
            u_scale,
        },
    )
}

/// One agent's labelled samples, one sample per row.
#[derive(Debug, Clone)]
pub struct AgentSamples {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// Logistic loss with unit ridge and `g_i = ½‖·‖₂` composed with Gaussian `U_i`.
pub fn make_distributed_logistic(
    data: &[AgentSamples],
    u_rows: usize,
    seed: u64,
    u_scale: f64,
) -> Result<ProblemInstance, ProblemError> {
    let n = data
        .first()
        .map(|d| d.features.ncols())
        .ok_or_else(|| ProblemError::Dimensions("no agent data".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(data.len());
    for d in data {
        let f = Logistic::new(d.features.clone(), d.labels.clone(), 1.0)?;
        agents.push(AgentProblem {
            f: Arc::new(f),
            g: ProxOperator::Euclidean { weight: 0.5 },
            u: gaussian_matrix(&mut rng, u_rows, n) * u_scale,
        });
    }
    ProblemInstance::new(
        agents,
        InstanceMeta {
            name: "distributed_logistic".into(),
            seed,
            u_scale,
        },
    )
}

/// Shuffles samples with `seed` and deals them evenly over `m` agents; the
/// first `samples mod m` agents get one extra.
pub fn split_samples(
    features: &DMatrix<f64>,
    labels: &DVector<f64>,
    m: usize,
    seed: u64,
) -> Result<Vec<AgentSamples>, ProblemError> {
    let s = labels.len();
    if m == 0 || s < m {
        return Err(ProblemError::TooFewSamples { samples: s, agents: m });
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = s / m;
    let extra = s % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let count = base + usize::from(i < extra);
        let idx = &order[start..start + count];
        out.push(AgentSamples {
            features: features.select_rows(idx),
            labels: DVector::from_iterator(count, idx.iter().map(|&j| labels[j])),
        });
        start += count;
    }
    Ok(out)
}

/// Gaussian features with labels from a planted linear model with 10% flips.
pub fn synthetic_classification(samples: usize, features: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gaussian_matrix(&mut rng, features, 1).column(0).into_owned();
    let a = gaussian_matrix(&mut rng, samples, features);
    let margins = &a * &w;
    let labels = DVector::from_iterator(
        samples,
        margins.iter().map(|&z| {
            let b = if z >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < 0.1 {
                -b
            } else {
                b
            }
        }),
    );
    (a, labels)
}
