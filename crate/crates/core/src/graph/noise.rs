use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gaussian noise model with a cached square-root information matrix.
///
/// The whitener `W = L^-1` (with `Sigma = L L^T`) satisfies `W^T W = Sigma^-1`,
/// so `|W r|^2` is the Mahalanobis norm of `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    whitener: DMatrix<f64>,
}

impl NoiseModel {
    pub fn from_covariance(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() == 0 {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let n = covariance.nrows();
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite)?;
        if whitener.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            covariance,
            whitener,
        })
    }

    pub fn from_sigmas(sigmas: &[f64]) -> Result<Self> {
        let var = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| s * s));
        Self::from_covariance(DMatrix::from_diagonal(&var))
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self> {
        Self::from_sigmas(&vec![sigma; dim])
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.whitener * r
    }

    pub fn whiten_matrix(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.whitener * j
    }

    /// Squared Mahalanobis norm `r^T Sigma^-1 r`.
    pub fn mahalanobis_sq(&self, r: &DVector<f64>) -> f64 {
        self.whiten(r).norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitener_matches_information() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let n = NoiseModel::from_covariance(cov.clone()).unwrap();
        let info = cov.try_inverse().unwrap();
        let wtw = n.whitener().transpose() * n.whitener();
        assert!((wtw - &info).amax() < 1e-12);
        let r = DVector::from_vec(vec![0.3, -1.7]);
        let direct = (r.transpose() * &info * &r)[0];
        assert!((n.mahalanobis_sq(&r) - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NoiseModel::from_covariance(bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(NoiseModel::from_covariance(asym).is_err());
        assert!(NoiseModel::from_sigmas(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn doubling_covariance_scales_whitener() {
        let a = NoiseModel::from_sigmas(&[0.5, 2.0]).unwrap();
        let b = NoiseModel::from_covariance(a.covariance() * 2.0).unwrap();
        let ratio = b.whitener().component_div(a.whitener());
        assert!((ratio[(0, 0)] - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!((ratio[(1, 1)] - 1.0 / 2f64.sqrt()).abs() < 1e-14);
    }
}
