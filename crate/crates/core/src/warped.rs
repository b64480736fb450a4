//! Logit-warped heteroscedastic GP.
//!
//! Power targets are clipped to `[ε, 1 − ε]`, mapped through the logit and
//! fitted with a two-latent heteroscedastic Gaussian model. Predictions are
//! reported in the warped space and unwarped through the logistic function.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::{LikelihoodSpec, LATENT_CLAMP};
use crate::metrics::gaussian_log_densities;
use crate::svgp::{latent_marginals, train_svgp, TrainConfig, TrainTrace, VariationalState};

/// Largest double below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    pub epsilon: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig { epsilon: 1e-4 }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon <= 0.01 {
            Ok(())
        } else {
            Err(Error::Config(vec![format!("warp.epsilon must lie in (0, 0.01], got {}", self.epsilon)]))
        }
    }
}

/// Clipped logit of each value, plus how many values were clipped.
pub fn logit_warp_counted(p: &[f64], cfg: &WarpConfig) -> Result<(Vec<f64>, usize)> {
    cfg.validate()?;
    if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return validation(format!("warp input {i} = {} lies outside [0, 1]", p[i]));
    }
    let mut clipped = 0;
    let z = p
        .iter()
        .map(|&v| {
            let c = v.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
            clipped += usize::from(c != v);
            (c / (1.0 - c)).ln()
        })
        .collect();
    Ok((z, clipped))
}

pub fn logit_warp(p: &[f64], cfg: &WarpConfig) -> Result<Vec<f64>> {
    Ok(logit_warp_counted(p, cfg)?.0)
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn inv_logit_scalar(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn inv_logit(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| inv_logit_scalar(v)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpedModel {
    pub state: VariationalState,
    pub warp: WarpConfig,
    /// Mean of the warped training targets, removed before fitting.
    pub offset: f64,
    pub clipped_fraction: f64,
    pub trace: TrainTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPrediction {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub warped_mean: Vec<f64>,
    pub warped_sd: Vec<f64>,
}

/// Unwarps a warped-space mean and standard deviation to `(mean, mean − 2σ, mean + 2σ)`.
pub fn unwarp_band(warped_mean: f64, warped_sd: f64) -> (f64, f64, f64) {
    (
        inv_logit_scalar(warped_mean),
        inv_logit_scalar(warped_mean - 2.0 * warped_sd),
        inv_logit_scalar(warped_mean + 2.0 * warped_sd),
    )
}

pub fn warped_fit(x: &[f64], p: &[f64], kernels: Vec<KernelSpec>, cfg: &WarpConfig, train: &TrainConfig) -> Result<WarpedModel> {
    if x.is_empty() || x.len() != p.len() {
        return validation("training data must be non-empty with matching inputs and targets");
    }
    if kernels.len() != 2 {
        return validation(format!("warped model needs two latent kernels, got {}", kernels.len()));
    }
    let (z, clipped) = logit_warp_counted(p, cfg)?;
    let offset = z.iter().sum::<f64>() / z.len() as f64;
    let centred: Vec<f64> = z.iter().map(|v| v - offset).collect();
    let state = VariationalState::from_inputs(x, train.inducing_points, kernels)?;
    let trained = train_svgp(&state, &LikelihoodSpec::HeteroGaussian, x, &centred, train)?;
    Ok(WarpedModel {
        state: trained.state,
        warp: *cfg,
        offset,
        clipped_fraction: clipped as f64 / p.len() as f64,
        trace: trained.trace,
    })
}

impl WarpedModel {
    /// Warped-space predictive mean and variance of a new observation:
    /// location variance plus the log-normal mean of the noise latent.
    pub fn warped_moments(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.state.latents.len() != 2 {
            return Err(Error::State("warped model needs two latent functions".into()));
        }
        let (m1, v1) = latent_marginals(&self.state, 0, x)?;
        let (m2, v2) = latent_marginals(&self.state, 1, x)?;
        let mean = m1.iter().map(|m| m + self.offset).collect();
        let var = v1
            .iter()
            .zip(m2.iter().zip(&v2))
            .map(|(a, (m, v))| a + (m + 0.5 * v).min(LATENT_CLAMP).exp())
            .collect();
        Ok((mean, var))
    }

    pub fn predict(&self, x: &[f64]) -> Result<WarpedPrediction> {
        let (mu, var) = self.warped_moments(x)?;
        let mut out = WarpedPrediction {
            mean: Vec::with_capacity(x.len()),
            lower: Vec::with_capacity(x.len()),
            upper: Vec::with_capacity(x.len()),
            warped_mean: mu.clone(),
            warped_sd: var.iter().map(|v| v.sqrt()).collect(),
        };
        for (m, s) in mu.iter().zip(&out.warped_sd) {
            let (c, lo, hi) = unwarp_band(*m, *s);
            out.mean.push(c);
            out.lower.push(lo);
            out.upper.push(hi);
        }
        Ok(out)
    }

    /// Gaussian log densities of warped targets in the warped space.
    pub fn warped_log_densities(&self, x: &[f64], warped_y: &[f64]) -> Result<Vec<f64>> {
        let (mu, var) = self.warped_moments(x)?;
        gaussian_log_densities(warped_y, &mu, &var)
    }

    /// Warps power targets, then returns `(warped-space densities,
    /// power-space densities, clipped count)`. The power-space values add
    /// `−log(p (1 − p))` at the clipped target.
    pub fn log_densities(&self, x: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (z, clipped) = logit_warp_counted(p, &self.warp)?;
        let warped = self.warped_log_densities(x, &z)?;
        let eps = self.warp.epsilon;
        let power = warped
            .iter()
            .zip(p)
            .map(|(w, &v)| {
                let c = v.clamp(eps, 1.0 - eps);
                w - (c * (1.0 - c)).ln()
            })
            .collect();
        Ok((warped, power, clipped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn warp_examples() {
        let cfg = WarpConfig::default();
        let z = logit_warp(&[0.5, 0.9, 0.0], &cfg).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[1] - 9f64.ln()).abs() < 1e-15);
        assert!((z[2] - (1e-4f64 / (1.0 - 1e-4)).ln()).abs() < 1e-12);
        assert!((z[2] + 9.21024).abs() < 1e-5);
        assert!(logit_warp(&[1.2], &cfg).is_err());
        assert!(WarpConfig { epsilon: 0.02 }.validate().is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inv_logit_scalar(0.0), 0.5);
        assert!((inv_logit_scalar(9f64.ln()) - 0.9).abs() < 1e-15);
        let hi = inv_logit_scalar(50.0);
        let lo = inv_logit_scalar(-50.0);
        assert!(hi < 1.0 && (1.0 - hi) < 1e-12);
        assert!(lo > 0.0 && lo < 1e-12);
        let far = inv_logit_scalar(-1e4);
        assert!(far > 0.0 && far.is_finite());
    }

    #[test]
    fn band_examples() {
        let (m, lo, hi) = unwarp_band(0.0, 1.0);
        assert_eq!(m, 0.5);
        assert!((lo - 0.11920).abs() < 1e-5 && (hi - 0.88080).abs() < 1e-5);
        let (m, lo, hi) = unwarp_band(1.3, 0.0);
        assert!(m == lo && m == hi);
    }

    proptest! {
        #[test]
        fn round_trip(p in 1e-4f64..(1.0 - 1e-4)) {
            let z = logit_warp(&[p], &WarpConfig::default()).unwrap();
            prop_assert!((inv_logit(&z)[0] - p).abs() < 1e-12);
        }

        #[test]
        fn band_is_ordered(m in -20.0f64..20.0, s in 1e-3f64..5.0) {
            let (c, lo, hi) = unwarp_band(m, s);
            prop_assert!(0.0 < lo && lo <= c && c <= hi && hi < 1.0);
        }
    }
}
