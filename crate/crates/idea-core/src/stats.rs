//! Feature statistics over candidate tokens and the two distances built on
//! them.
//!
//! Statistics are a per-dimension mean and standard deviation pair, the
//! coordinates of a domain in the diagonal-Gaussian model used throughout the
//! crate. Two distances are deliberately distinct:
//!
//! * [`moment_distance`]: `||d_mu|| + ||d_sigma||`, the alignment objective's
//!   per-layer term;
//! * [`w2_distance`]: `sqrt(||d_mu||^2 + ||d_sigma||^2)`, the 2-Wasserstein
//!   distance between diagonal Gaussians, used for retrieval, merging, and the
//!   coverage gate.

use crate::error::{IdeaError, Result};
use crate::linalg::Matrix;
use crate::Real;

/// Numerical configuration for statistics extraction.
#[derive(Debug, Clone, Copy)]
pub struct StatsConfig<T> {
    /// Variance floor added before the square root.
    pub epsilon: T,
    /// Expected feature dimension of incoming token matrices.
    pub feature_dim: usize,
}

impl<T: Real> StatsConfig<T> {
    pub fn new(epsilon: T, feature_dim: usize) -> Result<Self> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(IdeaError::invalid("epsilon must be a positive finite real"));
        }
        if feature_dim == 0 {
            return Err(IdeaError::invalid("feature_dim must be positive"));
        }
        Ok(StatsConfig {
            epsilon,
            feature_dim,
        })
    }

    /// Default floor 1e-6 with the given feature dimension.
    pub fn with_dim(feature_dim: usize) -> Result<Self> {
        StatsConfig::new(T::real(1e-6), feature_dim)
    }
}

/// Per-layer mean and standard deviation of candidate-token features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Real> FeatureStats<T> {
    /// Validated constructor: matching lengths, finite entries, nonnegative std.
    pub fn new(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(IdeaError::invalid(format!(
                "mean has {} entries, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if mean.is_empty() {
            return Err(IdeaError::invalid("statistics must have dimension >= 1"));
        }
        if !mean.iter().chain(std.iter()).all(|v| v.is_finite()) {
            return Err(IdeaError::invalid("non-finite entry in statistics"));
        }
        if std.iter().any(|s| *s < T::zero()) {
            return Err(IdeaError::invalid("negative std entry"));
        }
        Ok(FeatureStats { mean, std })
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Pool token rows into per-dimension statistics.
///
/// Mean is the column mean; std is `sqrt(var + eps)` with the unbiased
/// `1/(N-1)` variance. A single row has its variance term defined as zero, so
/// every std entry degenerates to `sqrt(eps)`.
pub fn compute_stats<T: Real>(tokens: &Matrix<T>, cfg: &StatsConfig<T>) -> Result<FeatureStats<T>> {
    let n = tokens.rows();
    if n == 0 {
        return Err(IdeaError::invalid("empty token matrix"));
    }
    if tokens.cols() != cfg.feature_dim {
        return Err(IdeaError::invalid(format!(
            "token matrix has {} columns, config expects {}",
            tokens.cols(),
            cfg.feature_dim
        )));
    }
    if !tokens.is_finite() {
        return Err(IdeaError::invalid("non-finite entry in token matrix"));
    }

    let mean = tokens.row_mean();
    let mut std = vec![T::zero(); tokens.cols()];
    if n > 1 {
        let inv = T::one() / T::from_count(n - 1);
        for i in 0..n {
            for (acc, (v, m)) in std.iter_mut().zip(tokens.row(i).iter().zip(&mean)) {
                let d = *v - *m;
                *acc = *acc + d * d;
            }
        }
        for acc in std.iter_mut() {
            *acc = (*acc * inv + cfg.epsilon).sqrt();
        }
    } else {
        let floor = cfg.epsilon.sqrt();
        for acc in std.iter_mut() {
            *acc = floor;
        }
    }
    FeatureStats::new(mean, std)
}

fn check_dims<T: Real>(a: &FeatureStats<T>, b: &FeatureStats<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(IdeaError::invalid(format!(
            "statistics dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Squared norms of the mean difference and the std difference.
fn diff_norms<T: Real>(a: &FeatureStats<T>, b: &FeatureStats<T>) -> (T, T) {
    let mut dm = T::zero();
    let mut ds = T::zero();
    for (ma, mb) in a.mean.iter().zip(&b.mean) {
        let d = *ma - *mb;
        dm = dm + d * d;
    }
    for (sa, sb) in a.std.iter().zip(&b.std) {
        let d = *sa - *sb;
        ds = ds + d * d;
    }
    (dm, ds)
}

/// 2-Wasserstein distance between diagonal Gaussians:
/// `sqrt(||mu_a - mu_b||^2 + ||sigma_a - sigma_b||^2)`.
pub fn w2_distance<T: Real>(a: &FeatureStats<T>, b: &FeatureStats<T>) -> Result<T> {
    check_dims(a, b)?;
    let (dm, ds) = diff_norms(a, b);
    Ok((dm + ds).sqrt())
}

/// Moment-matching distance: `||mu_a - mu_b|| + ||sigma_a - sigma_b||`.
pub fn moment_distance<T: Real>(source: &FeatureStats<T>, target: &FeatureStats<T>) -> Result<T> {
    check_dims(source, target)?;
    let (dm, ds) = diff_norms(source, target);
    Ok(dm.sqrt() + ds.sqrt())
}
