use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Result, SdrError};

/// Smallest accepted squared Cholesky pivot relative to the largest diagonal entry.
const PIVOT_RATIO: f64 = 1e-12;

/// Cholesky factorization that also rejects numerically singular matrices.
pub(crate) fn cholesky_checked(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = m.diagonal().iter().cloned().fold(0.0f64, f64::max);
    let chol = Cholesky::new(m)
        .ok_or_else(|| SdrError::SingularCovariance(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !(max_diag > 0.0) || min_pivot < PIVOT_RATIO * max_diag {
        return Err(SdrError::SingularCovariance(format!(
            "{what} is numerically singular (pivot ratio {:.3e})",
            min_pivot / max_diag.max(f64::MIN_POSITIVE)
        )));
    }
    Ok(chol)
}

/// Symmetric eigen-decomposition sorted by descending eigenvalue.
pub(crate) fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// Makes the largest-magnitude entry of every column positive (first on ties).
pub(crate) fn canonical_signs(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter()
        .map(|col| {
            let mut best = 0usize;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            if col.len() > 0 && col[best] < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Symmetrized `x'x / n`.
pub(crate) fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut s = x.tr_mul(x) / n;
    symmetrize(&mut s);
    s
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
