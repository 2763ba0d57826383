//! Small dense helpers around the n×n Gram matrix `XXᵀ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Factorised Gram matrix `K = XXᵀ` together with its spectrum.
#[derive(Clone, Debug)]
pub struct Gram {
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Eigenvalues in ascending order.
    eigenvalues: Vec<f64>,
}

impl Gram {
    pub fn from_features(x: &DMatrix<f64>) -> Result<Self> {
        Self::from_matrix(x * x.transpose())
    }

    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::InvalidArgument("Gram matrix must be square".into()));
        }
        let eigenvalues = symmetric_eigenvalues(&k)?;
        let top = eigenvalues.last().copied().unwrap_or(0.0);
        if !(eigenvalues.first().copied().unwrap_or(0.0) > 1e-14 * top) {
            return Err(Error::RankDeficient("Gram matrix is singular".into()));
        }
        let chol =
            k.clone().cholesky().ok_or_else(|| Error::RankDeficient("Gram matrix is not positive definite".into()))?;
        Ok(Self { k, chol, eigenvalues })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mu_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn mu_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn condition(&self) -> f64 {
        self.mu_max() / self.mu_min()
    }

    /// `vᵀ K v`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.k * v))
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = a.clone().try_symmetric_eigen(f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Principal submatrix `A[idx, idx]`.
pub fn principal(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])])
}

/// Rows `idx` of `a`, in the given order.
pub fn select_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), a.ncols(), |r, c| a[(idx[r], c)])
}

pub fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Cholesky solve that rejects numerically singular systems.
///
/// A pivot is considered singular when its square falls below
/// `rel_tol · max diag(A)`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let max_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > rel_tol * max_diag) {
        return None;
    }
    Some(chol.solve(b))
}

pub fn max_or(v: impl IntoIterator<Item = f64>, empty: f64) -> f64 {
    v.into_iter().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))).unwrap_or(empty)
}

pub fn min_or(v: impl IntoIterator<Item = f64>, empty: f64) -> f64 {
    v.into_iter().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x)))).unwrap_or(empty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_of_orthonormal_rows_is_identity() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let g = Gram::from_features(&x).unwrap();
        assert_eq!(g.mu_min(), 1.0);
        assert_eq!(g.mu_max(), 1.0);
        let b = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(g.solve(&b), b);
    }

    #[test]
    fn singular_gram_is_rejected() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(Gram::from_features(&x), Err(Error::RankDeficient(_))));
        let k = &x * x.transpose();
        assert!(spd_solve(&k, &DVector::from_vec(vec![1.0, 1.0]), 1e-12).is_none());
    }
}
