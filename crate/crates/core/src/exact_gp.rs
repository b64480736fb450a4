//! Dense GP regression with a Gaussian likelihood and zero prior mean.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{robust_cholesky, Factor};
use crate::optim::Adam;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const MAX_EXACT_POINTS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct ExactGp {
    kernel: KernelSpec,
    noise_variance: f64,
    train_x: Vec<f64>,
    /// Targets after removing `offset`.
    train_y: Vec<f64>,
    offset: f64,
    factor: Factor,
    alpha: DVector<f64>,
}

impl ExactGp {
    /// Uses the targets as given (zero prior mean, no centring).
    pub fn new(kernel: KernelSpec, noise_variance: f64, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::build(kernel, noise_variance, x, y, 0.0)
    }

    /// Subtracts the training mean from the targets and adds it back at
    /// prediction time.
    pub fn centered(kernel: KernelSpec, noise_variance: f64, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return validation("exact GP needs at least one training point");
        }
        let offset = y.iter().sum::<f64>() / y.len() as f64;
        let y = y.iter().map(|v| v - offset).collect();
        Self::build(kernel, noise_variance, x, y, offset)
    }

    fn build(kernel: KernelSpec, noise_variance: f64, x: Vec<f64>, y: Vec<f64>, offset: f64) -> Result<Self> {
        kernel.validate()?;
        if x.is_empty() || x.len() != y.len() {
            return validation("exact GP needs matching, non-empty inputs and targets");
        }
        if x.len() > MAX_EXACT_POINTS {
            return validation(format!("exact GP is limited to {MAX_EXACT_POINTS} points, got {}", x.len()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return validation(format!("noise variance must be non-negative, got {noise_variance}"));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return validation(format!("target {i} is not finite"));
        }
        let mut k = kernel.matrix(&x, &x)?;
        for i in 0..x.len() {
            k[(i, i)] += noise_variance;
        }
        let factor = robust_cholesky(&k)?;
        let alpha = factor.solve_vec(&DVector::from_column_slice(&y));
        Ok(ExactGp { kernel, noise_variance, train_x: x, train_y: y, offset, factor, alpha })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn train_x(&self) -> &[f64] {
        &self.train_x
    }

    /// Jitter that was needed to factor `K + σ²I`.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Lower Cholesky factor of `K + σ²I` (plus any jitter).
    pub fn chol(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    /// Negative log marginal likelihood of the (centred) targets.
    pub fn nlml(&self) -> f64 {
        let y = DVector::from_column_slice(&self.train_y);
        0.5 * y.dot(&self.alpha) + 0.5 * self.factor.log_det() + 0.5 * self.train_y.len() as f64 * LN_2PI
    }

    /// NLML and its gradient with respect to `[kernel log params…, log σ²]`.
    pub fn nlml_grad(&self) -> (f64, Vec<f64>) {
        let n = self.train_x.len();
        // W = K⁻¹ − ααᵀ; ∂nlml/∂θ = ½ tr(W ∂K/∂θ)
        let w = self.factor.inverse() - &self.alpha * self.alpha.transpose();
        let mut grad = vec![0.0; self.kernel.n_params() + 1];
        let g = w * 0.5;
        self.kernel.backprop(&self.train_x, &self.train_x, &g, &mut grad[..self.kernel.n_params()], None, None);
        grad[self.kernel.n_params()] = self.noise_variance * (0..n).map(|i| g[(i, i)]).sum::<f64>();
        (self.nlml(), grad)
    }

    /// Same data, new hyperparameters.
    pub fn with_log_params(&self, p: &[f64]) -> Result<Self> {
        let np = self.kernel.n_params();
        if p.len() != np + 1 {
            return validation(format!("expected {} log parameters, got {}", np + 1, p.len()));
        }
        let mut kernel = self.kernel.clone();
        kernel.set_log_params(&p[..np])?;
        Self::build(kernel, p[np].exp(), self.train_x.clone(), self.train_y.clone(), self.offset)
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut p = self.kernel.log_params();
        p.push(self.noise_variance.ln());
        p
    }

    /// Posterior mean and variance of `f(x*)`, or of `y(x*)` with `include_noise`.
    pub fn posterior(&self, test_x: &[f64], include_noise: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let ks = self.kernel.matrix(test_x, &self.train_x)?;
        let mean = &ks * &self.alpha;
        let v = self
            .factor
            .chol
            .l()
            .solve_lower_triangular(&ks.transpose())
            .ok_or_else(|| Error::Validation("singular training factor".into()))?;
        let var = test_x
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let reduce = v.column(i).norm_squared();
                let f = (self.kernel.eval(x, x) - reduce).max(0.0);
                if include_noise {
                    f + self.noise_variance
                } else {
                    f
                }
            })
            .collect();
        Ok((mean.iter().map(|m| m + self.offset).collect(), var))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactFitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub min_log_param: f64,
    pub max_log_param: f64,
    /// Stop once the accepted NLML change falls below this.
    pub tolerance: f64,
}

impl Default for ExactFitConfig {
    fn default() -> Self {
        ExactFitConfig {
            learning_rate: 0.05,
            iterations: 500,
            min_log_param: (1e-6f64).ln(),
            max_log_param: (1e4f64).ln(),
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExactFit {
    pub model: ExactGp,
    pub initial_nlml: f64,
    pub final_nlml: f64,
    /// NLML after each accepted step.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Minimises the NLML over log-hyperparameters with Adam. Steps that would
/// increase the NLML (or fail to factor) are rejected and the step size is
/// halved, so the accepted sequence is monotone. Accepted steps let the step
/// size grow back towards the configured rate.
pub fn fit_exact(model: &ExactGp, cfg: &ExactFitConfig) -> Result<ExactFit> {
    if !(cfg.learning_rate > 0.0) || cfg.min_log_param >= cfg.max_log_param {
        return Err(Error::Config(vec!["exact fit needs a positive learning rate and min < max bounds".into()]));
    }
    let mut current = model.clone();
    let (mut f, mut g) = current.nlml_grad();
    let initial = f;
    let mut params = current.log_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut history = vec![f];
    let mut converged = false;
    let mut rejections = 0;
    for _ in 0..cfg.iterations {
        let step = adam.direction(&g);
        let trial: Vec<f64> = params
            .iter()
            .zip(&step)
            .map(|(p, d)| (p + d).clamp(cfg.min_log_param, cfg.max_log_param))
            .collect();
        let accepted = match current.with_log_params(&trial) {
            Ok(m) if m.nlml() <= f => Some(m),
            _ => None,
        };
        match accepted {
            Some(m) => {
                let (nf, ng) = m.nlml_grad();
                let change = f - nf;
                current = m;
                params = trial;
                f = nf;
                g = ng;
                history.push(f);
                rejections = 0;
                adam.learning_rate = (adam.learning_rate * 1.25).min(cfg.learning_rate);
                if change < cfg.tolerance && g.iter().all(|v| v.abs() < 1e-4) {
                    converged = true;
                    break;
                }
            }
            None => {
                adam.learning_rate *= 0.5;
                rejections += 1;
                if rejections > 40 {
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        warn!("exact GP fit stopped after {} iterations without converging", cfg.iterations);
    }
    Ok(ExactFit { model: current, initial_nlml: initial, final_nlml: f, history, converged })
}
