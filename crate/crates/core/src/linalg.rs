//! Small dense helpers shared by the solvers.
//!
//! Stacked agent vectors are stored as one `DVector` per agent ("blocks").
//! Every helper here iterates blocks in agent order so reductions are
//! reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// One vector per agent.
pub type Blocks = Vec<DVector<f64>>;

pub fn zeros(count: usize, dim: usize) -> Blocks {
    vec![DVector::zeros(dim); count]
}

pub fn dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub fn norm_sq(a: &[DVector<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum()
}

pub fn norm(a: &[DVector<f64>]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[DVector<f64>], b: &[DVector<f64>]) -> Blocks {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[DVector<f64>], b: &[DVector<f64>]) -> Blocks {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[DVector<f64>], s: f64) -> Blocks {
    a.iter().map(|x| x * s).collect()
}

pub fn all_finite(a: &[DVector<f64>]) -> bool {
    a.iter().all(|x| x.iter().all(|v| v.is_finite()))
}

/// Concatenates blocks into one long vector.
pub fn stack(a: &[DVector<f64>]) -> DVector<f64> {
    let len = a.iter().map(|x| x.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for x in a {
        out.rows_mut(offset, x.len()).copy_from(x);
        offset += x.len();
    }
    out
}

/// Splits a long vector into `count` blocks of length `dim`.
pub fn unstack(v: &DVector<f64>, count: usize, dim: usize) -> Blocks {
    assert_eq!(v.len(), count * dim, "unstack: length mismatch");
    (0..count)
        .map(|i| v.rows(i * dim, dim).into_owned())
        .collect()
}

/// `(A ⊗ I_dim) · x` for blocks `x`, skipping zero coefficients.
pub fn kron_apply(a: &DMatrix<f64>, x: &[DVector<f64>]) -> Blocks {
    let dim = x.first().map_or(0, |v| v.len());
    (0..a.nrows())
        .map(|i| {
            let mut acc = DVector::zeros(dim);
            for (j, xj) in x.iter().enumerate() {
                let w = a[(i, j)];
                if w != 0.0 {
                    acc.axpy(w, xj, 1.0);
                }
            }
            acc
        })
        .collect()
}

/// Dense `A ⊗ I_dim`.
pub fn kron_identity(a: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(r * dim, c * dim);
    for i in 0..r {
        for j in 0..c {
            let w = a[(i, j)];
            if w != 0.0 {
                for k in 0..dim {
                    out[(i * dim + k, j * dim + k)] = w;
                }
            }
        }
    }
    out
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues below zero by rounding are clamped.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(a, |l| l.max(0.0).sqrt())
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues with
/// magnitude below `rel_tol · max|λ|` are treated as zero.
pub fn sym_pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let cut = rel_tol * top.max(f64::MIN_POSITIVE);
    rebuild(&eig, |l| if l.abs() > cut { 1.0 / l } else { 0.0 })
}

fn spectral_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    rebuild(&eig, f)
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&mapped) * q.transpose();
    // Symmetrize away rounding asymmetry.
    (&out + out.transpose()) * 0.5
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub fn sym_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, l| m.max(l.abs()))
}
