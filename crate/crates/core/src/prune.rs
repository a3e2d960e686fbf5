//! Per-class Gaussian density model and retention-threshold pruning.
//!
//! Densities are handled in log space throughout: with hundreds of feature
//! dimensions the raw density underflows, while thresholding on the log is
//! order-preserving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SHRINKAGE: f64 = 0.1;
pub const DEFAULT_RETENTION: f64 = 0.8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor of a symmetric matrix, row-major.
/// Returns `None` when a pivot is not positive relative to its diagonal
/// entry (1e-12), which also catches singular matrices blurred by rounding.
fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > 1e-12 * a[i * k + i].abs()) || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    shrinkage: f64,
    /// Ridge added to the diagonal when the shrunk covariance failed to factor.
    ridge: f64,
    factor: Vec<f64>,
    log_normalizer: f64,
}

impl GaussianModel {
    /// Builds a model from an explicit mean and covariance.
    pub fn from_moments(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 || covariance.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: format!("{k}x{k} covariance"),
                actual: format!("{} entries", covariance.len()),
            });
        }
        let factor = cholesky(&covariance, k).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self::assemble(mean, covariance, 0.0, 0.0, factor))
    }

    fn assemble(mean: Vec<f64>, covariance: Vec<f64>, shrinkage: f64, ridge: f64, factor: Vec<f64>) -> Self {
        let k = mean.len();
        let half_log_det: f64 = (0..k).map(|i| factor[i * k + i].ln()).sum();
        Self {
            log_normalizer: -(k as f64) / 2.0 * LN_2PI - half_log_det,
            mean,
            covariance,
            shrinkage,
            ridge,
            factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Regularized covariance, row-major `k×k`.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Lower-triangular Cholesky factor of the covariance, row-major.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    /// `−(k/2)·log 2π − (1/2)·log|Σ|`, the log density at the mean.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Squared Mahalanobis distance via a forward triangular solve.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        let k = self.dim();
        if x.len() != k {
            return Err(Error::DimensionMismatch {
                expected: format!("{k}-vector"),
                actual: format!("{}-vector", x.len()),
            });
        }
        // Solve L z = x − u.
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut s = x[i] - self.mean[i];
            for p in 0..i {
                s -= self.factor[i * k + p] * z[p];
            }
            z[i] = s / self.factor[i * k + i];
        }
        Ok(z.iter().map(|v| v * v).sum())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_normalizer - 0.5 * self.mahalanobis_sq(x)?)
    }
}

/// Fits mean and shrunk ML covariance: `Σ = (1−λ)·S + λ·diag(S)`.
///
/// When `Σ` does not factor, `δ·I` with `δ = 1e−9·tr(S)/k` is added once;
/// data that still fails (or has zero total variance) is rejected.
pub fn fit_gaussian(features: &[Vec<f64>], shrinkage: f64) -> Result<GaussianModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { needed: 2, got: n });
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::invalid(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    let k = features[0].len();
    if k == 0 {
        return Err(Error::invalid("feature vectors must be non-empty"));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: format!("{k}-vector"),
            actual: format!("{}-vector", bad.len()),
        });
    }
    let mut mean = vec![0.0; k];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut scatter = vec![0.0; k * k];
    let mut centered = vec![0.0; k];
    for f in features {
        for ((c, v), m) in centered.iter_mut().zip(f).zip(&mean) {
            *c = v - m;
        }
        for i in 0..k {
            let ci = centered[i];
            for j in 0..=i {
                scatter[i * k + j] += ci * centered[j];
            }
        }
    }
    let mut cov = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s = scatter[i * k + j] / n as f64;
            let v = if i == j { s } else { (1.0 - shrinkage) * s };
            cov[i * k + j] = v;
            cov[j * k + i] = v;
        }
    }
    if let Some(factor) = cholesky(&cov, k) {
        return Ok(GaussianModel::assemble(mean, cov, shrinkage, 0.0, factor));
    }
    let trace: f64 = (0..k).map(|i| scatter[i * k + i] / n as f64).sum();
    let ridge = 1e-9 * trace / k as f64;
    if !(ridge > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    for i in 0..k {
        cov[i * k + i] += ridge;
    }
    let factor = cholesky(&cov, k).ok_or(Error::NotPositiveDefinite)?;
    Ok(GaussianModel::assemble(mean, cov, shrinkage, ridge, factor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Log-density threshold: the smallest kept log-density.
    pub epsilon: f64,
    pub log_densities: Vec<f64>,
}

/// `⌈retention·n⌉`, robust to representation error in `retention`.
pub fn retained_count(retention: f64, n: usize) -> usize {
    let exact = retention * n as f64;
    let rounded = exact.round();
    let m = if (exact - rounded).abs() < 1e-9 * n.max(1) as f64 {
        rounded as usize
    } else {
        exact.ceil() as usize
    };
    m.clamp(1, n)
}

/// Fits a Gaussian to `features` and keeps the `⌈retention·n⌉` samples of
/// highest log-density (ties go to the lower index).
pub fn prune(features: &[Vec<f64>], shrinkage: f64, retention: f64) -> Result<(GaussianModel, PruneResult)> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::invalid(format!("retention {retention} outside (0, 1]")));
    }
    let model = fit_gaussian(features, shrinkage)?;
    let log_densities = features
        .iter()
        .map(|f| model.log_density(f))
        .collect::<Result<Vec<_>>>()?;
    let n = features.len();
    let keep_n = retained_count(retention, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| log_densities[b].total_cmp(&log_densities[a]).then(a.cmp(&b)));
    let epsilon = log_densities[order[keep_n - 1]];
    let mut kept = order[..keep_n].to_vec();
    let mut removed = order[keep_n..].to_vec();
    kept.sort_unstable();
    removed.sort_unstable();
    Ok((
        model,
        PruneResult {
            kept,
            removed,
            epsilon,
            log_densities,
        },
    ))
}

/// Machine-readable pruning summary for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub class: String,
    pub epsilon: f64,
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub retention: f64,
}

impl PruneReport {
    pub fn new(class: impl Into<String>, result: &PruneResult, retention: f64) -> Self {
        Self {
            class: class.into(),
            epsilon: result.epsilon,
            kept: result.kept.clone(),
            removed: result.removed.clone(),
            retention,
        }
    }
}
