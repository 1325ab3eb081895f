//! Agent graphs, mixing matrices and the consensus operators built from them.
//!
//! A [`MixingMatrix`] `W` encodes one round of neighbor averaging. It must be
//! symmetric and doubly stochastic, have a positive entry exactly on the
//! edges and the diagonal, and have `1` as a simple eigenvalue with the rest
//! of the spectrum inside `(-1, 1)`. [`validate_mixing_matrix`] checks all of
//! these; [`metropolis_weights`] produces a matrix that satisfies them for any
//! connected graph.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{self, Blocks};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("graph needs at least one agent")]
    Empty,
    #[error("graph is disconnected: {0}")]
    DisconnectedGraph(String),
    #[error("invalid edge ({0}, {1}) for {2} agents")]
    InvalidEdge(usize, usize, usize),
    #[error("erdos-renyi edge probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quadratic form x'(I-W)x = {0} is negative; W is not a valid mixing matrix")]
    NegativeForm(f64),
}

/// Topology descriptor used by configs and the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Line,
    Cycle,
    Star,
    Complete,
    ErdosRenyi { p: f64, seed: u64 },
}

/// Undirected simple graph over agents `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are normalized to `(min, max)`;
    /// self-loops are rejected and connectivity is enforced.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        if node_count == 0 {
            return Err(NetworkError::Empty);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= node_count || b >= node_count {
                return Err(NetworkError::InvalidEdge(a, b, node_count));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = Graph {
            node_count,
            edges: set,
        };
        if !g.is_connected() {
            return Err(NetworkError::DisconnectedGraph(format!(
                "{} agents, {} edges",
                node_count,
                g.edges.len()
            )));
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn is_connected(&self) -> bool {
        connected(self.node_count, &self.edges)
    }
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

const ER_RETRIES: u64 = 100;

pub fn build_graph(topology: Topology, m: usize) -> Result<Graph, NetworkError> {
    if m == 0 {
        return Err(NetworkError::Empty);
    }
    match topology {
        Topology::Line => Graph::new(m, (1..m).map(|i| (i - 1, i))),
        Topology::Cycle => {
            let mut edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
            if m > 2 {
                edges.push((m - 1, 0));
            }
            Graph::new(m, edges)
        }
        Topology::Star => Graph::new(m, (1..m).map(|i| (0, i))),
        Topology::Complete => Graph::new(
            m,
            (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))),
        ),
        Topology::ErdosRenyi { p, seed } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(NetworkError::BadProbability(p));
            }
            for attempt in 0..ER_RETRIES {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
                let mut edges = BTreeSet::new();
                for i in 0..m {
                    for j in i + 1..m {
                        if rng.random::<f64>() < p {
                            edges.insert((i, j));
                        }
                    }
                }
                if connected(m, &edges) {
                    return Graph::new(m, edges);
                }
            }
            Err(NetworkError::DisconnectedGraph(format!(
                "erdos_renyi(p={p}, seed={seed}) stayed disconnected after {ER_RETRIES} samples"
            )))
        }
    }
}

/// Symmetric doubly stochastic weights plus the neighbor lists they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    // (neighbor, weight) pairs per agent, including the agent itself.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Wraps an arbitrary square matrix. No validation is performed; use
    /// [`validate_mixing_matrix`] to check the axioms.
    pub fn from_dense(weights: DMatrix<f64>) -> Self {
        assert_eq!(weights.nrows(), weights.ncols(), "mixing matrix must be square");
        let neighbors = (0..weights.nrows())
            .map(|i| {
                (0..weights.ncols())
                    .filter(|&j| weights[(i, j)] != 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        MixingMatrix { weights, neighbors }
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `I - W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        DMatrix::identity(self.agents(), self.agents()) - &self.weights
    }
}

/// Metropolis-Hastings weights: `1 / (1 + max(deg_i, deg_j))` on edges, the
/// diagonal absorbs the remainder of each row.
pub fn metropolis_weights(g: &Graph) -> MixingMatrix {
    let m = g.node_count();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(m, m);
    for (a, b) in g.edges() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_dense(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingCheck {
    Symmetric,
    RowStochastic,
    ColumnStochastic,
    SparsityPattern,
    SimpleUnitEigenvalue,
    SpectrumInRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: MixingCheck,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Second largest eigenvalue magnitude, `max(|λ_2|, |λ_min|)`.
    pub spectral_gap_modulus: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed(&self, check: MixingCheck) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }
}

/// Checks every mixing-matrix axiom and itemizes the failures.
pub fn validate_mixing_matrix(
    w: &MixingMatrix,
    g: &Graph,
    tol: f64,
) -> Result<ValidationReport, NetworkError> {
    let m = g.node_count();
    if w.agents() != m {
        return Err(NetworkError::DimensionMismatch {
            expected: m,
            got: w.agents(),
        });
    }
    let a = w.dense();
    let mut report = ValidationReport::default();
    let mut fail = |check, detail: String| report.violations.push(Violation { check, detail });

    let asym = (a - a.transpose()).amax();
    if asym > tol {
        fail(MixingCheck::Symmetric, format!("max |W - W'| = {asym:e}"));
    }
    for i in 0..m {
        let row: f64 = a.row(i).sum();
        if (row - 1.0).abs() > tol {
            fail(MixingCheck::RowStochastic, format!("row {i} sums to {row}"));
        }
        let col: f64 = a.column(i).sum();
        if (col - 1.0).abs() > tol {
            fail(MixingCheck::ColumnStochastic, format!("column {i} sums to {col}"));
        }
        for j in 0..m {
            let should_be_positive = i == j || g.has_edge(i, j);
            let v = a[(i, j)];
            if should_be_positive && v <= 0.0 {
                fail(MixingCheck::SparsityPattern, format!("W[{i},{j}] = {v} must be > 0"));
            } else if !should_be_positive && v != 0.0 {
                fail(MixingCheck::SparsityPattern, format!("W[{i},{j}] = {v} must be 0"));
            }
        }
    }

    let sym = (a + a.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    let near_one = eig.iter().filter(|&&l| (l - 1.0).abs() <= tol.max(1e-12)).count();
    if near_one != 1 {
        fail(
            MixingCheck::SimpleUnitEigenvalue,
            format!("eigenvalue 1 has multiplicity {near_one}"),
        );
    }
    let rest = &eig[1.min(eig.len())..];
    let modulus = rest.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()));
    if eig.first().is_some_and(|&l| l > 1.0 + tol) {
        fail(MixingCheck::SpectrumInRange, format!("largest eigenvalue {} > 1", eig[0]));
    }
    if let Some(&low) = eig.last() {
        if low <= -1.0 + tol {
            fail(MixingCheck::SpectrumInRange, format!("smallest eigenvalue {low} <= -1"));
        }
    }
    report.spectral_gap_modulus = modulus;
    Ok(report)
}

fn check_blocks(w: &MixingMatrix, x: &[nalgebra::DVector<f64>]) -> Result<usize, NetworkError> {
    if x.len() != w.agents() {
        return Err(NetworkError::DimensionMismatch {
            expected: w.agents(),
            got: x.len(),
        });
    }
    let dim = x.first().map_or(0, |v| v.len());
    if let Some(bad) = x.iter().find(|v| v.len() != dim) {
        return Err(NetworkError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    Ok(dim)
}

/// One communication round: block `i` becomes `Σ_{j∈N_i} W_ij x_j`.
pub fn gossip_round(w: &MixingMatrix, x: &[nalgebra::DVector<f64>]) -> Result<Blocks, NetworkError> {
    let dim = check_blocks(w, x)?;
    Ok((0..w.agents())
        .map(|i| {
            let mut acc = nalgebra::DVector::zeros(dim);
            for &(j, wij) in w.neighbors(i) {
                acc.axpy(wij, &x[j], 1.0);
            }
            acc
        })
        .collect())
}

/// `sqrt(x'((I-W)⊗I)x)`, zero exactly on consensual inputs.
pub fn consensus_violation(w: &MixingMatrix, x: &[nalgebra::DVector<f64>]) -> Result<f64, NetworkError> {
    let q = laplacian_form(w, x)?;
    let scale = linalg::norm_sq(x).max(f64::MIN_POSITIVE);
    if q < -1e-12 * scale {
        return Err(NetworkError::NegativeForm(q));
    }
    Ok(q.max(0.0).sqrt())
}

/// `x'((I-W)⊗I)x`, evaluated edge-wise as `½ Σ_ij W_ij ‖x_i - x_j‖²`.
///
/// The edge form is exact for symmetric stochastic `W` and never loses the
/// small differences of nearly consensual inputs to cancellation.
pub fn laplacian_form(w: &MixingMatrix, x: &[nalgebra::DVector<f64>]) -> Result<f64, NetworkError> {
    check_blocks(w, x)?;
    let mut total = 0.0;
    for i in 0..w.agents() {
        let row_sum: f64 = w.neighbors(i).iter().map(|&(_, v)| v).sum();
        for &(j, wij) in w.neighbors(i) {
            if j != i {
                total += 0.5 * wij * (&x[i] - &x[j]).norm_squared();
            }
        }
        // Rows that do not sum to one contribute (1 - Σ_j W_ij)‖x_i‖².
        total += (1.0 - row_sum) * x[i].norm_squared();
    }
    Ok(total)
}

/// `V = ½(I - W) ⊗ I_n`, applied blockwise without forming the Kronecker product.
#[derive(Debug, Clone)]
pub struct ConsensusOperator<'a> {
    w: &'a MixingMatrix,
    block_dim: usize,
}

impl<'a> ConsensusOperator<'a> {
    pub fn new(w: &'a MixingMatrix, block_dim: usize) -> Self {
        ConsensusOperator { w, block_dim }
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn apply(&self, x: &[nalgebra::DVector<f64>]) -> Result<Blocks, NetworkError> {
        let mixed = gossip_round(self.w, x)?;
        Ok(x.iter().zip(&mixed).map(|(xi, wi)| (xi - wi) * 0.5).collect())
    }

    /// `x' V x`.
    pub fn quadratic_form(&self, x: &[nalgebra::DVector<f64>]) -> Result<f64, NetworkError> {
        Ok(0.5 * laplacian_form(self.w, x)?)
    }

    /// The m×m factor `½(I - W)`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.w.laplacian() * 0.5
    }
}
