//! Small dense helpers for p×p symmetric matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cut-off for the Moore–Penrose inverse.
pub const PINV_REL_TOL: f64 = 1e-12;

/// Moore–Penrose inverse of a symmetric PSD matrix with its numerical rank.
#[derive(Debug, Clone)]
pub struct SymPinv {
    pub inverse: DMatrix<f64>,
    pub rank: usize,
    pub eigenvalues: DVector<f64>,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Pseudoinverse via eigenvalue truncation at `rel_tol` of the largest
/// eigenvalue. The result is exactly symmetric.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> SymPinv {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * largest;
    let mut inverse = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if largest > 0.0 && lambda > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            inverse += (v * v.transpose()) / lambda;
        }
    }
    SymPinv {
        inverse: symmetrize(&inverse),
        rank,
        eigenvalues: eig.eigenvalues,
    }
}

/// Symmetric PSD square root; negative round-off eigenvalues are clamped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

/// `vᵀ M v` for a row-major view of `M` supplied as a flat slice.
#[inline]
pub fn quad_form_slice(m: &[f64], v: &[f64]) -> f64 {
    let p = v.len();
    debug_assert_eq!(m.len(), p * p);
    let mut acc = 0.0;
    for i in 0..p {
        let row = &m[i * p..(i + 1) * p];
        let mut s = 0.0;
        for j in 0..p {
            s += row[j] * v[j];
        }
        acc += v[i] * s;
    }
    acc
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Row-major flattening.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
