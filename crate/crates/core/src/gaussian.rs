use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalues below `-PSD_TOLERANCE · max(1, ‖Σ‖)` mark a covariance as broken.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        debug_assert_eq!(covariance.nrows(), mean.len());
        debug_assert_eq!(covariance.ncols(), mean.len());
        Self { mean, covariance }
    }

    /// Independent coordinates with the given means and standard deviations.
    pub fn diagonal(means: &[f64], stds: &[f64]) -> Self {
        let variances: Vec<f64> = stds.iter().map(|s| s * s).collect();
        Self::new(
            DVector::from_column_slice(means),
            DMatrix::from_diagonal(&DVector::from_vec(variances)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.symmetrized()).eigenvalues.min()
    }

    fn symmetrized(&self) -> DMatrix<f64> {
        (&self.covariance + self.covariance.transpose()) * 0.5
    }

    /// Errors unless the covariance is finite, symmetric, and numerically PSD.
    pub fn check_psd(&self) -> Result<()> {
        let cov = &self.covariance;
        if cov.iter().any(|v| !v.is_finite()) || self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite belief".into()));
        }
        let scale = cov.amax().max(1.0);
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(Error::Numerical(format!("covariance asymmetric by {asym:e}")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "covariance not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::new(self)
    }
}

/// Draws from a fixed Gaussian through a precomputed square-root factor.
///
/// The factor comes from a symmetric eigendecomposition so that singular
/// (degenerate) covariances still sample exactly on their support.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(belief: &GaussianBelief) -> Result<Self> {
        belief.check_psd()?;
        let eig = SymmetricEigen::new(belief.symmetrized());
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            mean: belief.mean.clone(),
            factor,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}
