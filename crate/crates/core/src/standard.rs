//! The homoscedastic sparse GP: one latent function, Gaussian noise.

use crate::error::{validation, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::LikelihoodSpec;
use crate::metrics::gaussian_log_densities;
use crate::svgp::{latent_marginals, train_svgp, with_optimal_gaussian_q, TrainConfig, TrainTrace, VariationalState};

/// Initial Gaussian noise variance before training.
pub const DEFAULT_NOISE: f64 = 0.01;

/// 97.5% standard-normal quantile, used for the reported 95% band.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq)]
pub struct StandardModel {
    pub state: VariationalState,
    pub likelihood: LikelihoodSpec,
    /// Training-target mean removed before fitting.
    pub offset: f64,
    pub trace: TrainTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    /// Predictive variance of a new observation (noise included).
    pub variance: Vec<f64>,
}

impl GaussianPrediction {
    pub fn band(&self, i: usize) -> (f64, f64) {
        let half = Z_975 * self.variance[i].sqrt();
        (self.mean[i] - half, self.mean[i] + half)
    }
}

/// Fits the sparse Gaussian-likelihood model to centred targets, starting
/// from the closed-form optimal `q(u)`.
pub fn standard_fit(x: &[f64], y: &[f64], kernel: KernelSpec, noise: f64, cfg: &TrainConfig) -> Result<StandardModel> {
    if x.is_empty() || x.len() != y.len() {
        return validation("training data must be non-empty with matching inputs and targets");
    }
    let offset = y.iter().sum::<f64>() / y.len() as f64;
    let centred: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let lik = LikelihoodSpec::gaussian(noise)?;
    let state = VariationalState::from_inputs(x, cfg.inducing_points, vec![kernel])?;
    let state = with_optimal_gaussian_q(&state, &lik, x, &centred)?;
    let trained = train_svgp(&state, &lik, x, &centred, cfg)?;
    Ok(StandardModel { state: trained.state, likelihood: trained.likelihood, offset, trace: trained.trace })
}

impl StandardModel {
    pub fn noise_variance(&self) -> f64 {
        match self.likelihood {
            LikelihoodSpec::Gaussian { noise_variance } => noise_variance,
            _ => unreachable!("standard model always carries a Gaussian likelihood"),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<GaussianPrediction> {
        let (mu, var) = latent_marginals(&self.state, 0, x)?;
        let noise = self.noise_variance();
        Ok(GaussianPrediction {
            mean: mu.iter().map(|m| m + self.offset).collect(),
            variance: var.iter().map(|v| v + noise).collect(),
        })
    }

    pub fn log_densities(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let p = self.predict(x)?;
        gaussian_log_densities(y, &p.mean, &p.variance)
    }
}
