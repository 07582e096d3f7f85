//! Sliced inverse regression by direct eigen-decomposition.
//!
//! This is the small-scale reference the optimal-scoring solver is checked
//! against. It needs `Sigma_x` to be invertible, which is exactly what fails
//! once features outnumber samples.

use nalgebra::{DMatrix, DVector};

use crate::dataset::PredictorMatrix;
use crate::design::ScoringDesign;
use crate::error::{Result, SdrError};
use crate::linalg::{
    canonical_signs, cholesky_checked, covariance, symmetric_eigen_desc, symmetrize,
};

/// Largest feature count accepted by the dense generalized eigensolver.
pub const MAX_DENSE_FEATURES: usize = 2000;

/// Solution of `M v = lambda Sigma v`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Sigma-orthonormal eigenvectors as columns, same order.
    pub vectors: DMatrix<f64>,
    /// Number of leading pairs requested.
    pub d_used: usize,
}

impl EigenBasis {
    /// The leading `d_used` eigenvectors.
    pub fn basis(&self) -> DMatrix<f64> {
        self.vectors.columns(0, self.d_used).into_owned()
    }
}

/// `M = sum_s pi_s m_s m_s'` over slices, with `m_s` the within-slice mean of `x`.
pub fn slice_mean_cov(x: &PredictorMatrix, design: &ScoringDesign) -> Result<DMatrix<f64>> {
    require_centered(x)?;
    if design.n_samples() != x.n_samples() {
        return Err(SdrError::validation(
            "design and predictors disagree on sample count",
        ));
    }
    let n = x.n_samples() as f64;
    let p = x.n_features();
    let h = design.h();
    let mut sums = DMatrix::<f64>::zeros(p, h);
    let values = x.values();
    for (i, &s) in design.slice_of().iter().enumerate() {
        let mut col = sums.column_mut(s);
        col += values.row(i).transpose();
    }
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (s, &size) in design.slice_sizes().iter().enumerate() {
        let mean = sums.column(s) / size as f64;
        let weight = size as f64 / n;
        m.ger(weight, &mean, &mean, 1.0);
    }
    symmetrize(&mut m);
    Ok(m)
}

fn require_centered(x: &PredictorMatrix) -> Result<()> {
    if !x.is_centered() {
        return Err(SdrError::validation("predictors must be centered"));
    }
    Ok(())
}

/// Generalized eigenproblem `M v = lambda Sigma v` by Cholesky whitening.
///
/// Vectors come back Sigma-orthonormal with the largest-magnitude entry of
/// each made positive.
pub fn generalized_eigen(
    m: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = cholesky_checked(sigma.clone(), "predictor covariance")?;
    let l = chol.l();
    // C = L^{-1} M L^{-T}
    let left = l
        .solve_lower_triangular(m)
        .ok_or_else(|| SdrError::Numerical("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| SdrError::Numerical("triangular solve failed".into()))?;
    let (values, u) = symmetric_eigen_desc(c);
    let mut vectors = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| SdrError::Numerical("triangular solve failed".into()))?;
    for (j, sign) in canonical_signs(&vectors).into_iter().enumerate() {
        if sign < 0.0 {
            vectors.column_mut(j).neg_mut();
        }
    }
    Ok((values, vectors))
}

/// SIR eigenbasis for the x-scale problem, top `d` directions retained.
pub fn sir_eigen(x: &PredictorMatrix, design: &ScoringDesign, d: usize) -> Result<EigenBasis> {
    require_centered(x)?;
    let p = x.n_features();
    if p > MAX_DENSE_FEATURES {
        return Err(SdrError::validation(format!(
            "dense SIR supports at most {MAX_DENSE_FEATURES} features, got {p}"
        )));
    }
    if d == 0 || d > p {
        return Err(SdrError::validation(format!("d = {d} outside 1..={p}")));
    }
    if p >= x.n_samples() {
        return Err(SdrError::SingularCovariance(format!(
            "{p} features with {} samples",
            x.n_samples()
        )));
    }
    let m = slice_mean_cov(x, design)?;
    let sigma = covariance(x.values());
    let (eigenvalues, vectors) = generalized_eigen(&m, &sigma)?;
    Ok(EigenBasis {
        eigenvalues,
        vectors,
        d_used: d,
    })
}

/// Orthonormal basis of the span of `a`, failing on rank deficiency.
fn orthonormal_basis(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.ncols() == 0 || a.ncols() > a.nrows() {
        return Err(SdrError::validation(format!(
            "{what} must be p x k with 1 <= k <= p, got {} x {}",
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = a.clone().svd(true, false);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return Err(SdrError::validation(format!("{what} is rank deficient")));
    }
    Ok(svd.u.expect("requested U"))
}

/// Largest principal angle between the column spans of `a` and `b`, radians.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(SdrError::validation(format!(
            "bases have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let qa = orthonormal_basis(a, "first basis")?;
    let qb = orthonormal_basis(b, "second basis")?;
    let cross = qa.tr_mul(&qb);
    let cos_min = cross.singular_values().min().clamp(0.0, 1.0);
    let residual = &qb - &qa * &cross;
    let sin_max = if residual.norm() == 0.0 {
        0.0
    } else {
        residual.singular_values().max().clamp(0.0, 1.0)
    };
    Ok(sin_max.atan2(cos_min))
}

/// Diagnostics from padding a block eigenvector out to the full problem.
#[derive(Debug, Clone, Copy)]
pub struct BlockExtension {
    /// `||M beta - lambda Sigma beta||` for the zero-padded vector.
    pub residual: f64,
    /// `||lambda Sigma beta||`, the natural scale of the residual.
    pub reference_norm: f64,
    pub eigenvalue: f64,
}

/// Solves the eigenproblem on `block` only, pads the leading eigenvectors
/// with zeros, and measures how well they solve the whole problem.
///
/// The residual reported is the largest over the `d` retained pairs.
pub fn block_extension_residual(
    m: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    block: &[usize],
    d: usize,
) -> Result<BlockExtension> {
    let p = m.nrows();
    if m.shape() != (p, p) || sigma.shape() != (p, p) {
        return Err(SdrError::validation(
            "M and Sigma must be square and equal in size",
        ));
    }
    if block.is_empty() || block.iter().any(|&j| j >= p) {
        return Err(SdrError::validation("block indices out of range"));
    }
    if d == 0 || d > block.len() {
        return Err(SdrError::validation(format!(
            "d = {d} outside 1..={}",
            block.len()
        )));
    }
    // the whole problem must be well posed too
    cholesky_checked(sigma.clone(), "predictor covariance")?;
    let m11 = m.select_rows(block).select_columns(block);
    let s11 = sigma.select_rows(block).select_columns(block);
    let (values, vectors) = generalized_eigen(&m11, &s11)?;
    let mut worst = BlockExtension {
        residual: 0.0,
        reference_norm: 0.0,
        eigenvalue: values[0],
    };
    for k in 0..d {
        let mut beta = DVector::<f64>::zeros(p);
        for (r, &j) in block.iter().enumerate() {
            beta[j] = vectors[(r, k)];
        }
        let target = sigma * &beta * values[k];
        let residual = (m * &beta - &target).norm();
        if k == 0 || residual > worst.residual {
            worst = BlockExtension {
                residual,
                reference_norm: target.norm(),
                eigenvalue: values[k],
            };
        }
    }
    Ok(worst)
}

/// [`block_extension_residual`] with `M` and `Sigma` estimated from data.
pub fn block_extension_check(
    x: &PredictorMatrix,
    design: &ScoringDesign,
    block: &[usize],
    d: usize,
) -> Result<BlockExtension> {
    require_centered(x)?;
    if x.n_features() >= x.n_samples() {
        return Err(SdrError::SingularCovariance(format!(
            "{} features with {} samples",
            x.n_features(),
            x.n_samples()
        )));
    }
    let m = slice_mean_cov(x, design)?;
    let sigma = covariance(x.values());
    block_extension_residual(&m, &sigma, block, d)
}
