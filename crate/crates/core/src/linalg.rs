//! Small dense symmetric linear algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Dimension above which the top eigenpair comes from power iteration.
pub const DENSE_EIGEN_MAX_DIM: usize = 64;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest eigenvalue of a symmetric matrix and a unit eigenvector for it.
#[derive(Clone, Debug)]
pub struct TopEigen {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Top eigenpair of a symmetric matrix.
///
/// Dense decomposition for small matrices; shifted power iteration above
/// [`DENSE_EIGEN_MAX_DIM`], retried densely if the iteration stalls.
pub fn top_eigen(m: &DMatrix<f64>) -> Result<TopEigen> {
    if m.nrows() <= DENSE_EIGEN_MAX_DIM {
        return dense_top_eigen(m);
    }
    match power_top_eigen(m, POWER_TOL, POWER_MAX_ITERS) {
        Ok(e) => Ok(e),
        Err(Error::EigenNotConverged) => dense_top_eigen(m),
        Err(e) => Err(e),
    }
}

pub fn dense_top_eigen(m: &DMatrix<f64>) -> Result<TopEigen> {
    let k = m.nrows();
    if k == 0 {
        return Ok(TopEigen { value: 0.0, vector: DVector::zeros(0) });
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(Error::EigenNotConverged)?;
    let (idx, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::EigenNotConverged)?;
    Ok(TopEigen { value, vector: eig.eigenvectors.column(idx).into_owned() })
}

/// Power iteration on `m + shift I`, where the Gershgorin shift makes the
/// spectrum nonnegative so the largest algebraic eigenvalue dominates.
pub fn power_top_eigen(m: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<TopEigen> {
    let k = m.nrows();
    let shift = (0..k)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let shifted = m + DMatrix::identity(k, k) * shift;
    // deterministic start with weight on every coordinate
    let mut v = DVector::from_iterator(k, (0..k).map(|i| 1.0 + 0.01 * i as f64));
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let mut next = &shifted * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return Ok(TopEigen { value: -shift, vector: v });
        }
        next /= norm;
        let new_lambda = next.dot(&(&shifted * &next));
        let converged = (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1.0)
            && (&next - &v).norm() <= tol.sqrt();
        lambda = new_lambda;
        v = next;
        if converged {
            return Ok(TopEigen { value: lambda - shift, vector: v });
        }
    }
    Err(Error::EigenNotConverged)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Symmetric square root and inverse square root of a positive definite matrix.
pub fn sqrt_and_inv_sqrt(m: &DMatrix<f64>, min_eig: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let smallest = eig.eigenvalues.min();
    if !(smallest >= min_eig) {
        return Err(Error::SingularCovariates(smallest));
    }
    let q = &eig.eigenvectors;
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let inv_root = root.map(|r| 1.0 / r);
    let sqrt = q * DMatrix::from_diagonal(&root) * q.transpose();
    let inv_sqrt = q * DMatrix::from_diagonal(&inv_root) * q.transpose();
    Ok((sqrt, inv_sqrt))
}
