//! Heteroscedastic Beta process: two latent GPs give the log shape
//! parameters of a Beta observation model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::interior_targets;
use crate::error::{validation, Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::{beta_log_pdf, LikelihoodSpec, LATENT_CLAMP};
use crate::svgp::{latent_marginals, train_svgp, TrainConfig, TrainTrace, VariationalState};

pub const MAX_STORED_COMPONENTS: usize = 10_000;
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PredictMode {
    /// Log-normal means of the shape parameters; no mixture.
    Moment,
    /// `samples` joint latent draws, kept as an equally weighted mixture.
    Sample { samples: usize },
}

impl Default for PredictMode {
    fn default() -> Self {
        PredictMode::Sample { samples: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbpPredictConfig {
    pub mode: PredictMode,
    pub seed: u64,
    /// Number of y draws behind each empirical interval.
    pub interval_draws: usize,
}

impl Default for HbpPredictConfig {
    fn default() -> Self {
        HbpPredictConfig { mode: PredictMode::default(), seed: 11, interval_draws: 2000 }
    }
}

impl HbpPredictConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let PredictMode::Sample { samples: 0 } = self.mode {
            problems.push("predict.mode.samples must be positive".to_string());
        }
        if self.interval_draws < 2 {
            problems.push("predict.interval_draws must be at least 2".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaPrediction {
    pub alpha_star: f64,
    pub beta_star: f64,
    /// Equally weighted `(α_s, β_s)` components, at most
    /// [`MAX_STORED_COMPONENTS`] of them.
    pub mixture: Option<Vec<(f64, f64)>>,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

fn open_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

fn shape(f: f64) -> f64 {
    f.clamp(-LATENT_CLAMP, LATENT_CLAMP).exp()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn beta_draw(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    // Shapes are clamped positive finite, so construction cannot fail.
    let d = Beta::new(a, b).expect("positive finite shape parameters");
    open_unit(d.sample(rng))
}

/// Prediction at one input from the latent marginals `(μ1, σ1²)`, `(μ2, σ2²)`.
/// `index` selects the point's random stream.
pub fn predict_from_marginals(
    mean: [f64; 2],
    var: [f64; 2],
    cfg: &HbpPredictConfig,
    index: u64,
) -> Result<BetaPrediction> {
    cfg.validate()?;
    if mean.iter().chain(&var).any(|v| !v.is_finite()) || var.iter().any(|v| *v < 0.0) {
        return validation("latent marginals must be finite with non-negative variance");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut draws = Vec::with_capacity(cfg.interval_draws);
    let pred = match cfg.mode {
        PredictMode::Moment => {
            let a = shape(mean[0] + 0.5 * var[0]);
            let b = shape(mean[1] + 0.5 * var[1]);
            for _ in 0..cfg.interval_draws {
                draws.push(beta_draw(&mut rng, a, b));
            }
            BetaPrediction { alpha_star: a, beta_star: b, mixture: None, mean: a / (a + b), lower95: 0.0, upper95: 0.0 }
        }
        PredictMode::Sample { samples } => {
            let sd = [var[0].sqrt(), var[1].sqrt()];
            let comps: Vec<(f64, f64)> = (0..samples)
                .map(|_| {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    (shape(mean[0] + sd[0] * z1), shape(mean[1] + sd[1] * z2))
                })
                .collect();
            let s = samples as f64;
            let alpha_star = comps.iter().map(|c| c.0).sum::<f64>() / s;
            let beta_star = comps.iter().map(|c| c.1).sum::<f64>() / s;
            let mean = comps.iter().map(|(a, b)| a / (a + b)).sum::<f64>() / s;
            for k in 0..cfg.interval_draws {
                let (a, b) = comps[k % samples];
                draws.push(beta_draw(&mut rng, a, b));
            }
            let mut stored = comps;
            stored.truncate(MAX_STORED_COMPONENTS);
            BetaPrediction { alpha_star, beta_star, mixture: Some(stored), mean, lower95: 0.0, upper95: 0.0 }
        }
    };
    draws.sort_by(f64::total_cmp);
    Ok(BetaPrediction {
        mean: open_unit(pred.mean),
        lower95: open_unit(quantile(&draws, 0.025)),
        upper95: open_unit(quantile(&draws, 0.975)),
        ..pred
    })
}

/// Per-point predictions; point `i` uses random stream `i`.
pub fn hbp_predict(state: &VariationalState, x: &[f64], cfg: &HbpPredictConfig) -> Result<Vec<BetaPrediction>> {
    if state.latents.len() != LikelihoodSpec::Beta.latent_count() {
        return Err(Error::State(format!(
            "Beta process needs a state with two latent functions, found {}",
            state.latents.len()
        )));
    }
    let (m1, v1) = latent_marginals(state, 0, x)?;
    let (m2, v2) = latent_marginals(state, 1, x)?;
    (0..x.len())
        .map(|i| predict_from_marginals([m1[i], m2[i]], [v1[i], v2[i]], cfg, i as u64))
        .collect()
}

/// Log predictive density; with a mixture, the log of the average
/// component density.
pub fn hbp_log_density(pred: &BetaPrediction, y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Support { likelihood: "beta", value: y });
    }
    match &pred.mixture {
        None => Ok(beta_log_pdf(y, pred.alpha_star, pred.beta_star)),
        Some(c) if c.is_empty() => validation("empty mixture"),
        Some(c) => {
            let logs: Vec<f64> = c.iter().map(|&(a, b)| beta_log_pdf(y, a, b)).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
            Ok(top + (s / c.len() as f64).ln())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HbpModel {
    pub state: VariationalState,
    /// Interior-mapping margin applied to training and test targets.
    pub epsilon: f64,
    pub clipped_fraction: f64,
    pub trace: TrainTrace,
}

/// Trains the Beta process on power targets in `[0, 1]`. Targets are first
/// pulled into `[ε, 1 − ε]`.
pub fn hbp_fit(x: &[f64], p: &[f64], kernels: Vec<KernelSpec>, epsilon: f64, cfg: &TrainConfig) -> Result<HbpModel> {
    if x.is_empty() || x.len() != p.len() {
        return validation("training data must be non-empty with matching inputs and targets");
    }
    if kernels.len() != 2 {
        return validation(format!("Beta process needs two latent kernels, got {}", kernels.len()));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return validation(format!("interior margin must lie in (0, 0.5), got {epsilon}"));
    }
    if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return validation(format!("power target {i} = {} lies outside [0, 1]", p[i]));
    }
    let (y, moved) = interior_targets(p, epsilon);
    let state = VariationalState::from_inputs(x, cfg.inducing_points, kernels)?;
    let trained = train_svgp(&state, &LikelihoodSpec::Beta, x, &y, cfg)?;
    Ok(HbpModel { state: trained.state, epsilon, clipped_fraction: moved as f64 / p.len() as f64, trace: trained.trace })
}

impl HbpModel {
    pub fn predict(&self, x: &[f64], cfg: &HbpPredictConfig) -> Result<Vec<BetaPrediction>> {
        hbp_predict(&self.state, x, cfg)
    }

    /// Log densities of interior-mapped targets, plus the number mapped.
    pub fn log_densities(&self, x: &[f64], p: &[f64], cfg: &HbpPredictConfig) -> Result<(Vec<f64>, usize)> {
        if x.len() != p.len() {
            return validation("inputs and targets differ in length");
        }
        crate::metrics::check_support(p, |v| (0.0..=1.0).contains(&v))?;
        let (y, moved) = interior_targets(p, self.epsilon);
        let preds = self.predict(x, cfg)?;
        let lds = preds.iter().zip(&y).map(|(pr, &v)| hbp_log_density(pr, v)).collect::<Result<_>>()?;
        Ok((lds, moved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a: f64, b: f64, mixture: Option<Vec<(f64, f64)>>) -> BetaPrediction {
        BetaPrediction { alpha_star: a, beta_star: b, mixture, mean: a / (a + b), lower95: 0.1, upper95: 0.9 }
    }

    #[test]
    fn collapsed_marginals() {
        let l2 = 2f64.ln();
        for mode in [PredictMode::Moment, PredictMode::Sample { samples: 50 }] {
            let cfg = HbpPredictConfig { mode, ..Default::default() };
            let p = predict_from_marginals([l2, l2], [0.0, 0.0], &cfg, 0).unwrap();
            assert!((p.alpha_star - 2.0).abs() < 1e-14 && (p.beta_star - 2.0).abs() < 1e-14);
            assert!((p.mean - 0.5).abs() < 1e-14);
            assert!(0.0 < p.lower95 && p.lower95 < p.upper95 && p.upper95 < 1.0);
        }
    }

    #[test]
    fn moment_mode_log_normal_mean() {
        let cfg = HbpPredictConfig { mode: PredictMode::Moment, ..Default::default() };
        let p = predict_from_marginals([0.0, -0.7], [2.0 * 2f64.ln(), 0.3], &cfg, 3).unwrap();
        assert!((p.alpha_star - 2.0).abs() < 1e-14);
        assert!(p.mixture.is_none());
    }

    #[test]
    fn density_examples() {
        assert_eq!(hbp_log_density(&single(1.0, 1.0, None), 0.37).unwrap(), 0.0);
        let one = hbp_log_density(&single(2.0, 3.0, None), 0.3).unwrap();
        let two = hbp_log_density(&single(2.0, 3.0, Some(vec![(2.0, 3.0), (2.0, 3.0)])), 0.3).unwrap();
        assert_eq!(one, two);
        let mix = hbp_log_density(&single(1.5, 1.5, Some(vec![(2.0, 2.0), (1.0, 1.0)])), 0.5).unwrap();
        assert!((mix - 1.25f64.ln()).abs() < 1e-14);
        assert!(hbp_log_density(&single(1.0, 1.0, None), 1.0).is_err());
    }

    #[test]
    fn streams_are_per_point() {
        let cfg = HbpPredictConfig::default();
        let a = predict_from_marginals([0.5, 0.1], [0.2, 0.3], &cfg, 4).unwrap();
        let b = predict_from_marginals([0.5, 0.1], [0.2, 0.3], &cfg, 4).unwrap();
        let c = predict_from_marginals([0.5, 0.1], [0.2, 0.3], &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.alpha_star, c.alpha_star);
    }
}
