//! Normalised mean squared error and joint log predictive likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::pairwise_sum;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Offending indices listed in a support error.
const MAX_LISTED: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Original,
    Warped,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Original => "original",
            Space::Warped => "warped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_name: String,
    pub nmse: f64,
    pub jll: f64,
    pub space: Space,
    pub n_test: usize,
    pub clipped_fraction: f64,
    /// Warped model only: JLL after the change of variables back to power units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jll_jacobian: Option<f64>,
}

/// `100 / (N σ²) · sqrt(Σ (y − ŷ)²)` with σ² the biased variance of `y`.
pub fn nmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return validation(format!("nmse: {} targets but {} predictions", y.len(), y_hat.len()));
    }
    if y.len() < 2 {
        return validation("nmse needs at least two points");
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return validation("nmse inputs must be finite");
    }
    let n = y.len() as f64;
    let mean = pairwise_sum(y) / n;
    let dev: Vec<f64> = y.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / n;
    if var <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let sq: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(100.0 / (n * var) * pairwise_sum(&sq).sqrt())
}

/// Fails with every index where `in_support` is false.
pub fn check_support(y: &[f64], in_support: impl Fn(f64) -> bool) -> Result<()> {
    let bad: Vec<usize> = y.iter().enumerate().filter(|(_, v)| !in_support(**v)).map(|(i, _)| i).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::SupportViolations { count: bad.len(), indices: bad.into_iter().take(MAX_LISTED).collect() })
    }
}

/// Sum of per-point log predictive densities, in a fixed pairwise order.
pub fn joint_log_likelihood(log_densities: &[f64]) -> Result<f64> {
    if log_densities.is_empty() {
        return validation("joint log likelihood needs at least one test point");
    }
    Ok(pairwise_sum(log_densities))
}

pub fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (y - mean) * (y - mean) / var)
}

/// Per-point Gaussian predictive log densities.
pub fn gaussian_log_densities(y: &[f64], mean: &[f64], var: &[f64]) -> Result<Vec<f64>> {
    if y.len() != mean.len() || y.len() != var.len() {
        return validation("targets, means and variances differ in length");
    }
    check_support(y, f64::is_finite)?;
    if let Some(i) = var.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return validation(format!("predictive variance at {i} must be positive"));
    }
    Ok(y.iter().zip(mean).zip(var).map(|((&y, &m), &v)| gaussian_log_density(y, m, v)).collect())
}

pub fn gaussian_jll(y: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    joint_log_likelihood(&gaussian_log_densities(y, mean, var)?)
}

/// Results table with one row per report.
pub fn results_csv(reports: &[EvaluationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Model", "NMSE", "JLL", "Space"])?;
    for r in reports {
        w.write_record([r.model_name.clone(), format!("{:?}", r.nmse), format!("{:?}", r.jll), r.space.as_str().into()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
