use serde::{Deserialize, Serialize};

use crate::ci::alpha_gamma;
use crate::error::{Error, Result};

/// Interval `[ȳ − α_γ σ̂/√n, ȳ + bias + α_γ σ̂/√n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiOutput {
    pub lower: f64,
    pub upper: f64,
    pub sample_mean: f64,
    pub sample_sigma: f64,
    /// `Σ Û_i / n`, added to the upper end only.
    pub bias_term: f64,
    pub gamma: f64,
}

impl CiOutput {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// The interval intersected with `[0, 1]`, for reporting only.
    pub fn clipped(&self) -> CiOutput {
        CiOutput { lower: self.lower.clamp(0.0, 1.0), upper: self.upper.clamp(0.0, 1.0), ..*self }
    }
}

/// Horvitz–Thompson mean `(1/n) Σ y_i` of reweighted observations.
pub fn horvitz_thompson(y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    Ok(y.iter().sum::<f64>() / y.len() as f64)
}

/// Unbiased sample variance with the `n − 1` divisor.
pub fn sample_variance(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid("sample variance needs at least two observations"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(ss / (y.len() - 1) as f64)
}

pub fn bernstein_interval(mean: f64, sigma: f64, n: usize, gamma: f64, bias_term: f64) -> Result<CiOutput> {
    if n < 2 {
        return Err(Error::invalid("interval needs n >= 2"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&bias_term) {
        return Err(Error::invalid(format!("bias term must lie in [0, 1], got {bias_term}")));
    }
    let radius = alpha_gamma(gamma)? * sigma / (n as f64).sqrt();
    Ok(CiOutput {
        lower: mean - radius,
        upper: mean + bias_term + radius,
        sample_mean: mean,
        sample_sigma: sigma,
        bias_term,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means() {
        assert_eq!(horvitz_thompson(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(horvitz_thompson(&[2.0, 0.0, 4.0]).unwrap(), 2.0);
        assert!(horvitz_thompson(&[]).is_err());
    }

    #[test]
    fn variances() {
        assert_eq!(sample_variance(&[0.7; 5]).unwrap(), 0.0);
        assert_eq!(sample_variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(sample_variance(&[1.0]).is_err());
    }

    #[test]
    fn intervals() {
        let ci = bernstein_interval(0.3, 0.0, 10, 0.9, 0.0).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.3, 0.3));

        let ci = bernstein_interval(0.0, 0.0, 10, 0.9, 1.0).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.0, 1.0));

        let ci = bernstein_interval(0.4, 0.5, 100, 0.05, 0.1).unwrap();
        assert!((ci.lower + 0.2593).abs() < 1e-4);
        assert!((ci.upper - 1.1593).abs() < 1e-4);
        assert!((ci.length() - (2.0 * (0.4 - ci.lower) + 0.1)).abs() < 1e-12);
        let c = ci.clipped();
        assert_eq!((c.lower, c.upper), (0.0, 1.0));

        assert!(bernstein_interval(0.4, 0.5, 100, 1.5, 0.1).is_err());
        assert!(bernstein_interval(0.4, 0.5, 1, 0.5, 0.1).is_err());
    }
}
