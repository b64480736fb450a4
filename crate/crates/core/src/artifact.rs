//! JSON model artifacts: everything needed to rebuild a trained model and
//! reproduce its predictions exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{validation, Error, Result};
use crate::exact_gp::ExactGp;
use crate::hbp::{HbpModel, HbpPredictConfig};
use crate::kernels::KernelSpec;
use crate::likelihoods::LikelihoodSpec;
use crate::standard::StandardModel;
use crate::svgp::{LatentQ, TrainTrace, VariationalState};
use crate::warped::{WarpConfig, WarpedModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Standard,
    Warped,
    Hbp,
    Exact,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::Warped => "warped",
            ModelKind::Hbp => "hbp",
            ModelKind::Exact => "exact",
        }
    }

    pub fn latent_count(self) -> usize {
        match self {
            ModelKind::Standard | ModelKind::Exact => 1,
            ModelKind::Warped | ModelKind::Hbp => 2,
        }
    }
}

/// Sparse variational part of an artifact. Each `chol` entry is the
/// row-major flattening of an `M × M` lower-triangular factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgpParams {
    pub likelihood: LikelihoodSpec,
    pub kernels: Vec<KernelSpec>,
    pub inducing: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub chol: Vec<Vec<f64>>,
}

impl SvgpParams {
    pub fn from_state(state: &VariationalState, likelihood: &LikelihoodSpec) -> Self {
        let m = state.inducing.len();
        SvgpParams {
            likelihood: likelihood.clone(),
            kernels: state.latents.iter().map(|q| q.kernel.clone()).collect(),
            inducing: state.inducing.clone(),
            means: state.latents.iter().map(|q| q.mean.iter().copied().collect()).collect(),
            chol: state
                .latents
                .iter()
                .map(|q| (0..m * m).map(|k| q.chol[(k / m, k % m)]).collect())
                .collect(),
        }
    }

    pub fn to_state(&self) -> Result<VariationalState> {
        let m = self.inducing.len();
        let j = self.kernels.len();
        if self.means.len() != j || self.chol.len() != j {
            return validation("artifact has mismatched numbers of kernels, means and factors");
        }
        let mut latents = Vec::with_capacity(j);
        for ((kernel, mean), chol) in self.kernels.iter().zip(&self.means).zip(&self.chol) {
            if mean.len() != m || chol.len() != m * m {
                return validation(format!("artifact latent does not match {m} inducing points"));
            }
            latents.push(LatentQ {
                kernel: kernel.clone(),
                mean: DVector::from_column_slice(mean),
                chol: DMatrix::from_row_slice(m, m, chol),
            });
        }
        let state = VariationalState { inducing: self.inducing.clone(), latents };
        state.validate(&self.likelihood)?;
        Ok(state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactParams {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub train_x: Vec<f64>,
    /// Targets as supplied, before centring.
    pub train_y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub format_version: u32,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svgp: Option<SvgpParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactParams>,
    pub normalization: Normalization,
    /// Mean removed from the (possibly warped) training targets.
    pub target_offset: f64,
    /// Warp clipping margin (warped) or interior-mapping margin (hbp).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub clipped_fraction: f64,
    /// Normalised wind-speed range of the training inputs.
    pub train_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<HbpPredictConfig>,
    pub initial_elbo: f64,
    pub final_elbo: f64,
}

/// A model rebuilt from an artifact, ready to predict.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Standard(StandardModel),
    Warped(WarpedModel),
    Hbp(HbpModel, HbpPredictConfig),
    Exact(ExactGp),
}

fn trace_of(a: &Artifact) -> TrainTrace {
    TrainTrace { initial_elbo: a.initial_elbo, final_elbo: a.final_elbo, ..Default::default() }
}

impl Artifact {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let a: Artifact = serde_json::from_str(&text)?;
        if a.format_version != FORMAT_VERSION {
            return Err(Error::State(format!("unsupported artifact format version {}", a.format_version)));
        }
        Ok(a)
    }

    fn svgp_state(&self) -> Result<(VariationalState, LikelihoodSpec)> {
        let p = self.svgp.as_ref().ok_or_else(|| Error::State(format!("{} artifact lacks variational parameters", self.model.as_str())))?;
        let expected = match self.model {
            ModelKind::Standard => "gaussian",
            ModelKind::Warped => "hetero",
            ModelKind::Hbp => "beta",
            ModelKind::Exact => unreachable!(),
        };
        if p.likelihood.name() != expected {
            return Err(Error::State(format!(
                "{} artifact carries a {} likelihood",
                self.model.as_str(),
                p.likelihood.name()
            )));
        }
        Ok((p.to_state()?, p.likelihood.clone()))
    }

    pub fn to_model(&self) -> Result<LoadedModel> {
        Ok(match self.model {
            ModelKind::Standard => {
                let (state, likelihood) = self.svgp_state()?;
                LoadedModel::Standard(StandardModel { state, likelihood, offset: self.target_offset, trace: trace_of(self) })
            }
            ModelKind::Warped => {
                let (state, _) = self.svgp_state()?;
                let warp = WarpConfig { epsilon: self.epsilon.unwrap_or(WarpConfig::default().epsilon) };
                warp.validate()?;
                LoadedModel::Warped(WarpedModel {
                    state,
                    warp,
                    offset: self.target_offset,
                    clipped_fraction: self.clipped_fraction,
                    trace: trace_of(self),
                })
            }
            ModelKind::Hbp => {
                let (state, _) = self.svgp_state()?;
                let model = HbpModel {
                    state,
                    epsilon: self.epsilon.unwrap_or(crate::data::INTERIOR_EPSILON),
                    clipped_fraction: self.clipped_fraction,
                    trace: trace_of(self),
                };
                LoadedModel::Hbp(model, self.predict.unwrap_or_default())
            }
            ModelKind::Exact => {
                let p = self.exact.as_ref().ok_or_else(|| Error::State("exact artifact lacks training data".into()))?;
                LoadedModel::Exact(ExactGp::centered(p.kernel.clone(), p.noise_variance, p.train_x.clone(), p.train_y.clone())?)
            }
        })
    }

    fn base(model: ModelKind, normalization: Normalization, train_range: [f64; 2], trace: &TrainTrace) -> Self {
        Artifact {
            format_version: FORMAT_VERSION,
            model,
            svgp: None,
            exact: None,
            normalization,
            target_offset: 0.0,
            epsilon: None,
            clipped_fraction: 0.0,
            train_range,
            predict: None,
            initial_elbo: trace.initial_elbo,
            final_elbo: trace.final_elbo,
        }
    }

    pub fn from_standard(m: &StandardModel, normalization: Normalization, train_range: [f64; 2]) -> Self {
        Artifact {
            svgp: Some(SvgpParams::from_state(&m.state, &m.likelihood)),
            target_offset: m.offset,
            ..Self::base(ModelKind::Standard, normalization, train_range, &m.trace)
        }
    }

    pub fn from_warped(m: &WarpedModel, normalization: Normalization, train_range: [f64; 2]) -> Self {
        Artifact {
            svgp: Some(SvgpParams::from_state(&m.state, &LikelihoodSpec::HeteroGaussian)),
            target_offset: m.offset,
            epsilon: Some(m.warp.epsilon),
            clipped_fraction: m.clipped_fraction,
            ..Self::base(ModelKind::Warped, normalization, train_range, &m.trace)
        }
    }

    pub fn from_hbp(m: &HbpModel, predict: HbpPredictConfig, normalization: Normalization, train_range: [f64; 2]) -> Self {
        Artifact {
            svgp: Some(SvgpParams::from_state(&m.state, &LikelihoodSpec::Beta)),
            epsilon: Some(m.epsilon),
            clipped_fraction: m.clipped_fraction,
            predict: Some(predict),
            ..Self::base(ModelKind::Hbp, normalization, train_range, &m.trace)
        }
    }

    pub fn from_exact(m: &ExactGp, train_y: Vec<f64>, nlml: (f64, f64), normalization: Normalization, train_range: [f64; 2]) -> Self {
        let trace = TrainTrace { initial_elbo: -nlml.0, final_elbo: -nlml.1, ..Default::default() };
        Artifact {
            exact: Some(ExactParams {
                kernel: m.kernel().clone(),
                noise_variance: m.noise_variance(),
                train_x: m.train_x().to_vec(),
                train_y,
            }),
            target_offset: m.offset(),
            ..Self::base(ModelKind::Exact, normalization, train_range, &trace)
        }
    }
}
