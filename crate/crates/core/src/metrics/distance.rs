use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker, Statistics};

use super::MetricsError;

/// Diagonal jitter added to a covariance that is not positive definite.
pub const FRECHET_JITTER: f64 = 1e-6;

/// Mean pairwise Euclidean distance between the rows of `M × F` features.
pub fn diversity(features: &Array2<f64>) -> Result<f64, MetricsError> {
    let m = features.nrows();
    if m < 2 {
        return Err(MetricsError::TooFewClips(m));
    }
    let mut total = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            let d = &features.row(a) - &features.row(b);
            total += d.dot(&d).sqrt();
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// Gaussian summary of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDistribution {
    pub mean: DVector<f64>,
    /// Unbiased sample covariance.
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureDistribution {
    pub fn from_features(features: &Array2<f64>) -> Result<Self, MetricsError> {
        let (m, f) = features.dim();
        if m < 2 {
            return Err(MetricsError::TooFewClips(m));
        }
        let x = DMatrix::from_fn(m, f, |i, j| features[[i, j]]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(m, f, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (m - 1) as f64;
        Ok(Self { mean, cov, count: m })
    }

    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, MetricsError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(MetricsError::DimensionMismatch(mean.len(), cov.nrows()));
        }
        Ok(Self { mean, cov, count: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `cov`, plus `FRECHET_JITTER · I` when its smallest eigenvalue is not
/// safely positive.
fn conditioned(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let c = symmetric(cov);
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.min() > 1e-12 * max {
        c
    } else {
        &c + DMatrix::identity(c.nrows(), c.ncols()) * FRECHET_JITTER
    }
}

/// Symmetric PSD square root via eigendecomposition; small negative
/// eigenvalues from rounding clamp to 0.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), MetricsError> {
    let eig = SymmetricEigen::new(symmetric(m));
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for r in roots.iter_mut() {
        if !r.is_finite() || *r < -1e-8 * scale {
            return Err(MetricsError::NonConvergentSqrt(*r));
        }
        *r = r.max(0.0).sqrt();
    }
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((root, roots))
}

/// `‖μ_P − μ_Q‖² + Tr(Σ_P + Σ_Q − 2(Σ_P Σ_Q)^{1/2})`.
///
/// The trace of `(Σ_P Σ_Q)^{1/2}` is taken from the symmetric, similar
/// matrix `Σ_P^{1/2} Σ_Q Σ_P^{1/2}`, which makes the result symmetric in its
/// arguments up to rounding.
pub fn frechet_distance(p: &FeatureDistribution, q: &FeatureDistribution) -> Result<f64, MetricsError> {
    if p.dim() != q.dim() {
        return Err(MetricsError::DimensionMismatch(p.dim(), q.dim()));
    }
    let (sp, sq) = (conditioned(&p.cov), conditioned(&q.cov));
    let (root_p, _) = sqrt_psd(&sp)?;
    let (_, roots) = sqrt_psd(&(&root_p * &sq * &root_p))?;
    let dm = &p.mean - &q.mean;
    let d = dm.dot(&dm) + sp.trace() + sq.trace() - 2.0 * roots.sum();
    Ok(d.max(0.0))
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either series is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    let (sx, sy) = (rx.iter().std_dev(), ry.iter().std_dev());
    if !(sx > 0.0 && sy > 0.0) {
        return None;
    }
    Some(rx.iter().covariance(ry.iter()) / (sx * sy))
}
