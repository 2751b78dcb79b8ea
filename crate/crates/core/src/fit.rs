//! Power-law fits `y ≈ C·x^p` by least squares on logarithms.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CfsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    /// `ln C`.
    pub intercept: f64,
    pub r2: f64,
    pub stderr: f64,
    /// Half-width of the 95% confidence interval of the exponent.
    pub ci95: f64,
    pub points: usize,
}

impl PowerFit {
    pub fn ci_low(&self) -> f64 {
        self.exponent - self.ci95
    }

    pub fn ci_high(&self) -> f64 {
        self.exponent + self.ci95
    }
}

/// Fits `ln y = intercept + exponent·ln x`. Needs at least two points with
/// positive coordinates; the interval needs three.
pub fn power_law(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.len() != y.len() {
        return Err(CfsError::InvalidParameter("fit arrays differ in length".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(CfsError::InvalidParameter("power-law fit needs positive finite data".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(CfsError::InvalidParameter("power-law fit needs at least two points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CfsError::InvalidParameter("power-law fit needs distinct abscissae".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - exponent * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let (stderr, ci95) = if n > 2 {
        let se = (sse / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .map_err(|e| CfsError::NumericalFailure(e.to_string()))?
            .inverse_cdf(0.975);
        (se, t * se)
    } else {
        (f64::NAN, f64::INFINITY)
    };
    Ok(PowerFit { exponent, intercept, r2, stderr, ci95, points: n })
}
