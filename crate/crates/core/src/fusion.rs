//! Late fusion of the texture and shape posteriors.

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Class probabilities: non-negative, summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("posterior must have at least one class"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("posterior entries must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("posterior sums to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for Posterior {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_lengths(a: &Posterior, b: &Posterior) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} classes", a.len()),
            actual: format!("{} classes", b.len()),
        });
    }
    Ok(())
}

/// Each stream's softmax weighted by one half.
pub fn fuse_average(texture: &Posterior, shape: &Posterior) -> Result<Posterior> {
    check_lengths(texture, shape)?;
    Ok(Posterior(
        texture.0.iter().zip(&shape.0).map(|(t, s)| 0.5 * t + 0.5 * s).collect(),
    ))
}

/// Elementwise maximum, renormalized to a distribution.
pub fn fuse_max(texture: &Posterior, shape: &Posterior) -> Result<Posterior> {
    check_lengths(texture, shape)?;
    let m: Vec<f64> = texture.0.iter().zip(&shape.0).map(|(t, s)| t.max(*s)).collect();
    let sum: f64 = m.iter().sum();
    Ok(Posterior(m.into_iter().map(|v| v / sum).collect()))
}

/// Argmax with ties going to the lowest index.
pub fn predict(p: &Posterior) -> usize {
    crate::nnet::argmax(&p.0)
}
