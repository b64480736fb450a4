//! Observation models and their Gaussian expectations.
//!
//! Latent values enter the two-latent models through `exp`, after clamping
//! to `[-LATENT_CLAMP, LATENT_CLAMP]`. Inside the clamp region the
//! derivative with respect to the latent is zero.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::special::{digamma, ln_beta, ln_gamma};
use crate::svgp::quadrature::GaussHermite;

pub const LATENT_CLAMP: f64 = 30.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LikelihoodSpec {
    Gaussian { noise_variance: f64 },
    #[serde(rename = "hetero")]
    HeteroGaussian,
    Beta,
}

/// Value and derivatives of `E_q[log p(y | f)]` with respect to the marginal
/// means and variances of each latent.
#[derive(Clone, Copy, Debug, Default)]
pub struct Expectation {
    pub value: f64,
    pub d_mean: [f64; 2],
    pub d_var: [f64; 2],
    /// Derivative with respect to the log noise variance (Gaussian only).
    pub d_log_noise: f64,
    /// Quadrature nodes whose latent value was clamped.
    pub clamped: usize,
}

#[inline]
fn clamp_latent(f: f64) -> (f64, f64, bool) {
    if f > LATENT_CLAMP {
        (LATENT_CLAMP, 0.0, true)
    } else if f < -LATENT_CLAMP {
        (-LATENT_CLAMP, 0.0, true)
    } else {
        (f, 1.0, false)
    }
}

/// log B(α, β) with range checking, α, β ∈ [1e-6, 1e6].
pub fn log_beta_fn(alpha: f64, beta: f64) -> Result<f64> {
    const LO: f64 = 1e-6;
    const HI: f64 = 1e6;
    if !(LO..=HI).contains(&alpha) || !(LO..=HI).contains(&beta) {
        return validation(format!("log-beta arguments must lie in [{LO}, {HI}], got ({alpha}, {beta})"));
    }
    Ok(ln_beta(alpha, beta))
}

/// Log-density of Beta(α, β) at y, no checks.
pub fn beta_log_pdf(y: f64, alpha: f64, beta: f64) -> f64 {
    (alpha - 1.0) * y.ln() + (beta - 1.0) * (-y).ln_1p() - ln_beta(alpha, beta)
}

impl LikelihoodSpec {
    pub fn gaussian(noise_variance: f64) -> Result<Self> {
        let lik = LikelihoodSpec::Gaussian { noise_variance };
        lik.validate()?;
        Ok(lik)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LikelihoodSpec::Gaussian { noise_variance } if !(noise_variance.is_finite() && noise_variance > 0.0) => {
                validation(format!("Gaussian noise variance must be positive, got {noise_variance}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodSpec::Gaussian { .. } => "gaussian",
            LikelihoodSpec::HeteroGaussian => "hetero",
            LikelihoodSpec::Beta => "beta",
        }
    }

    pub fn latent_count(&self) -> usize {
        match self {
            LikelihoodSpec::Gaussian { .. } => 1,
            LikelihoodSpec::HeteroGaussian | LikelihoodSpec::Beta => 2,
        }
    }

    /// Trainable likelihood parameters (log noise variance for Gaussian).
    pub fn n_params(&self) -> usize {
        match self {
            LikelihoodSpec::Gaussian { .. } => 1,
            _ => 0,
        }
    }

    pub fn check_target(&self, y: f64) -> Result<()> {
        match self {
            LikelihoodSpec::Beta if !(y > 0.0 && y < 1.0) => Err(Error::Support { likelihood: "beta", value: y }),
            _ if !y.is_finite() => validation(format!("target {y} is not finite")),
            _ => Ok(()),
        }
    }

    pub fn log_density(&self, y: f64, latents: &[f64]) -> Result<f64> {
        if latents.len() != self.latent_count() {
            return validation(format!(
                "{} likelihood takes {} latents, got {}",
                self.name(),
                self.latent_count(),
                latents.len()
            ));
        }
        if latents.iter().any(|f| !f.is_finite()) {
            return validation("latent values must be finite");
        }
        self.check_target(y)?;
        Ok(match *self {
            LikelihoodSpec::Gaussian { noise_variance } => {
                let r = y - latents[0];
                -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * r * r / noise_variance
            }
            LikelihoodSpec::HeteroGaussian => self.log_density_grad(y, latents[0], latents[1]).0,
            LikelihoodSpec::Beta => {
                let a = clamp_latent(latents[0]).0.exp();
                let b = clamp_latent(latents[1]).0.exp();
                beta_log_pdf(y, a, b)
            }
        })
    }

    /// Log-density of a two-latent model and its partial derivatives with
    /// respect to both latents; no validation.
    pub fn log_density_grad(&self, y: f64, f1: f64, f2: f64) -> (f64, f64, f64) {
        match *self {
            LikelihoodSpec::Gaussian { noise_variance } => {
                let r = y - f1;
                (-0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * r * r / noise_variance, r / noise_variance, 0.0)
            }
            LikelihoodSpec::HeteroGaussian => {
                let (g, mask, _) = clamp_latent(f2);
                let r = y - f1;
                let prec = (-g).exp();
                let lp = -0.5 * (LN_2PI + g) - 0.5 * r * r * prec;
                (lp, r * prec, mask * (-0.5 + 0.5 * r * r * prec))
            }
            LikelihoodSpec::Beta => {
                let (g1, m1, _) = clamp_latent(f1);
                let (g2, m2, _) = clamp_latent(f2);
                let a = g1.exp();
                let b = g2.exp();
                let ly = y.ln();
                let l1y = (-y).ln_1p();
                let ps = digamma(a + b);
                let lp = (a - 1.0) * ly + (b - 1.0) * l1y - ln_beta(a, b);
                (lp, m1 * a * (ly - digamma(a) + ps), m2 * b * (l1y - digamma(b) + ps))
            }
        }
    }

    /// `E[log p(y | f)]` under independent Gaussian marginals `N(mean[j], var[j])`.
    pub fn expected_log_lik(&self, y: f64, mean: &[f64], var: &[f64], gh: &GaussHermite) -> Result<f64> {
        let j = self.latent_count();
        if mean.len() != j || var.len() != j {
            return validation(format!("{} likelihood needs {j} marginals", self.name()));
        }
        if mean.iter().chain(var).any(|v| !v.is_finite()) || var.iter().any(|&v| v < 0.0) {
            return validation("marginal means must be finite and variances non-negative");
        }
        self.check_target(y)?;
        Ok(self.expectation(y, mean, var, gh).value)
    }

    /// Expected log-likelihood with derivatives; inputs are assumed valid.
    pub fn expectation(&self, y: f64, mean: &[f64], var: &[f64], gh: &GaussHermite) -> Expectation {
        match *self {
            LikelihoodSpec::Gaussian { noise_variance } => {
                let r = y - mean[0];
                let q = r * r + var[0];
                Expectation {
                    value: -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * q / noise_variance,
                    d_mean: [r / noise_variance, 0.0],
                    d_var: [-0.5 / noise_variance, 0.0],
                    d_log_noise: -0.5 + 0.5 * q / noise_variance,
                    clamped: 0,
                }
            }
            LikelihoodSpec::HeteroGaussian => self.tensor_expectation(y, mean, var, gh),
            LikelihoodSpec::Beta => beta_expectation(y, mean, var, gh),
        }
    }

    /// Plain H×H tensor-product rule over the generic log-density.
    fn tensor_expectation(&self, y: f64, mean: &[f64], var: &[f64], gh: &GaussHermite) -> Expectation {
        let s1 = var[0].sqrt();
        let s2 = var[1].sqrt();
        let mut e = Expectation::default();
        let (mut ds1, mut ds2) = (0.0, 0.0);
        for (&za, &wa) in gh.nodes.iter().zip(&gh.weights) {
            let f1 = mean[0] + s1 * za;
            for (&zb, &wb) in gh.nodes.iter().zip(&gh.weights) {
                let f2 = mean[1] + s2 * zb;
                let w = wa * wb;
                let (lp, d1, d2) = self.log_density_grad(y, f1, f2);
                if f2.abs() > LATENT_CLAMP {
                    e.clamped += 1;
                }
                e.value += w * lp;
                e.d_mean[0] += w * d1;
                e.d_mean[1] += w * d2;
                ds1 += w * d1 * za;
                ds2 += w * d2 * zb;
            }
        }
        e.d_var = [sigma_to_var_grad(ds1, s1), sigma_to_var_grad(ds2, s2)];
        e
    }
}

/// Converts ∂E/∂σ into ∂E/∂σ² (σ > 0 because variances are floored upstream).
#[inline]
fn sigma_to_var_grad(ds: f64, s: f64) -> f64 {
    if s > 0.0 {
        ds / (2.0 * s)
    } else {
        0.0
    }
}

/// Tensor-product quadrature of the Beta log-density. The per-axis terms
/// (lnΓ(α), ψ(α), …) are evaluated once per node; only the α+β terms need
/// all H² combinations.
fn beta_expectation(y: f64, mean: &[f64], var: &[f64], gh: &GaussHermite) -> Expectation {
    struct Axis {
        shape: f64,
        ln_gamma: f64,
        digamma: f64,
        mask: f64,
        clamped: bool,
    }
    let axis = |m: f64, s: f64| -> Vec<Axis> {
        gh.nodes
            .iter()
            .map(|&z| {
                let (g, mask, clamped) = clamp_latent(m + s * z);
                let shape = g.exp();
                Axis { shape, ln_gamma: ln_gamma(shape), digamma: digamma(shape), mask, clamped }
            })
            .collect()
    };
    let s1 = var[0].sqrt();
    let s2 = var[1].sqrt();
    let ax1 = axis(mean[0], s1);
    let ax2 = axis(mean[1], s2);
    let ly = y.ln();
    let l1y = (-y).ln_1p();
    let mut e = Expectation::default();
    let (mut ds1, mut ds2) = (0.0, 0.0);
    for (a, (&za, &wa)) in ax1.iter().zip(gh.nodes.iter().zip(&gh.weights)) {
        for (b, (&zb, &wb)) in ax2.iter().zip(gh.nodes.iter().zip(&gh.weights)) {
            let w = wa * wb;
            let s = a.shape + b.shape;
            let ps = digamma(s);
            let lp = (a.shape - 1.0) * ly + (b.shape - 1.0) * l1y - a.ln_gamma - b.ln_gamma + ln_gamma(s);
            let d1 = a.mask * a.shape * (ly - a.digamma + ps);
            let d2 = b.mask * b.shape * (l1y - b.digamma + ps);
            if a.clamped || b.clamped {
                e.clamped += 1;
            }
            e.value += w * lp;
            e.d_mean[0] += w * d1;
            e.d_mean[1] += w * d2;
            ds1 += w * d1 * za;
            ds2 += w * d2 * zb;
        }
    }
    e.d_var = [sigma_to_var_grad(ds1, s1), sigma_to_var_grad(ds2, s2)];
    e
}
