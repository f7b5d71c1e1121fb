//! Monte Carlo point estimates with standard errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean, its standard error and the number of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl EstimateWithError {
    /// A deterministic value (zero standard error).
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 1,
        }
    }

    /// Mean and standard error with pairwise summation in index order, so
    /// the result does not depend on how the samples were produced.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::simulation("no samples"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::simulation(format!(
                "sample {i} is not finite ({})",
                samples[i]
            )));
        }
        let n = samples.len();
        if samples.iter().all(|&v| v == samples[0]) {
            return Ok(Self {
                value: samples[0],
                std_error: 0.0,
                n_samples: n,
            });
        }
        let mean = pairwise_sum(samples) / n as f64;
        let std_error = if n > 1 {
            let dev: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            value: mean,
            std_error,
            n_samples: n,
        })
    }

    /// Estimate of `a - b` from paired samples.
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape("paired samples differ in length"));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&d)
    }

    /// `sqrt(se_a² + se_b²)` for independent estimates.
    pub fn combined_se(&self, other: &Self) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    pub fn within(&self, target: f64, n_se: f64, allowance: f64) -> bool {
        (self.value - target).abs() <= n_se * self.std_error + allowance
    }
}

/// Recursive pairwise summation; blocks of 8 are summed left to right.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_error() {
        let e = EstimateWithError::from_samples(&[2.0; 17]).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.n_samples, 17);
    }

    #[test]
    fn known_mean_and_error() {
        let e = EstimateWithError::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.value, 2.5);
        // sample variance 5/3, SE = sqrt(5/12)
        assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EstimateWithError::from_samples(&[1.0, f64::INFINITY]).is_err());
        assert!(EstimateWithError::from_samples(&[]).is_err());
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
