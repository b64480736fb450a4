//! Sparse variational GP engine shared by every case-study model.
//!
//! Each latent function `j` has its own kernel and a free-form Gaussian
//! `q(u_j) = N(m_j, L_j L_jᵀ)` over its values at the shared inducing inputs
//! `Z`. The parameterisation is not whitened.

mod elbo;
pub mod quadrature;
mod train;

use nalgebra::{DMatrix, DVector};

use crate::error::{validation, Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::LikelihoodSpec;
use crate::linalg::robust_cholesky;

pub use elbo::{elbo, elbo_with_grad, ElboEval};
pub use quadrature::{gauss_hermite, GaussHermite};
pub use train::{train_svgp, TrainConfig, TrainTrace, TrainedSvgp};

/// Marginal variances are floored here before they reach the likelihood.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentQ {
    pub kernel: KernelSpec,
    pub mean: DVector<f64>,
    /// Lower-triangular square root of the covariance, positive diagonal.
    pub chol: DMatrix<f64>,
}

impl LatentQ {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub inducing: Vec<f64>,
    pub latents: Vec<LatentQ>,
}

/// `count` evenly spaced empirical quantiles of `x`, sorted and deduplicated.
pub fn quantile_inducing(x: &[f64], count: usize) -> Result<Vec<f64>> {
    if x.is_empty() || count == 0 {
        return validation("inducing initialisation needs data and at least one point");
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut z: Vec<f64> = (0..count)
        .map(|k| {
            let p = if count == 1 { 0.5 } else { k as f64 / (count - 1) as f64 };
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let t = pos - lo as f64;
            sorted[lo] + t * (sorted[hi] - sorted[lo])
        })
        .collect();
    z.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    Ok(z)
}

impl VariationalState {
    /// Prior initialisation: `m_j = 0`, `S_j = K_zz` for every latent.
    pub fn prior(inducing: Vec<f64>, kernels: Vec<KernelSpec>) -> Result<Self> {
        if inducing.is_empty() {
            return validation("at least one inducing point is required");
        }
        if kernels.is_empty() {
            return validation("at least one latent kernel is required");
        }
        let mut latents = Vec::with_capacity(kernels.len());
        for kernel in kernels {
            kernel.validate()?;
            let kzz = kernel.matrix(&inducing, &inducing)?;
            let f = robust_cholesky(&kzz)?;
            latents.push(LatentQ { kernel, mean: DVector::zeros(inducing.len()), chol: f.l() });
        }
        let state = VariationalState { inducing, latents };
        state.check_structure()?;
        Ok(state)
    }

    /// Prior state with inducing inputs at `count` quantiles of `x`.
    pub fn from_inputs(x: &[f64], count: usize, kernels: Vec<KernelSpec>) -> Result<Self> {
        Self::prior(quantile_inducing(x, count)?, kernels)
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    fn check_structure(&self) -> Result<()> {
        let m = self.inducing.len();
        if m == 0 {
            return validation("at least one inducing point is required");
        }
        if self.inducing.iter().any(|z| !z.is_finite()) {
            return validation("inducing inputs must be finite");
        }
        if self.inducing.windows(2).any(|w| w[0] >= w[1]) {
            return validation("inducing inputs must be strictly increasing");
        }
        for (j, q) in self.latents.iter().enumerate() {
            if q.mean.len() != m || q.chol.shape() != (m, m) {
                return validation(format!("latent {j}: variational parameters do not match {m} inducing points"));
            }
            if (0..m).any(|i| !(q.chol[(i, i)] > 0.0)) {
                return validation(format!("latent {j}: covariance factor needs a positive diagonal"));
            }
            if (0..m).any(|i| (i + 1..m).any(|k| q.chol[(i, k)] != 0.0)) {
                return validation(format!("latent {j}: covariance factor must be lower triangular"));
            }
            q.kernel.validate()?;
        }
        Ok(())
    }

    pub fn validate(&self, lik: &LikelihoodSpec) -> Result<()> {
        self.check_structure()?;
        lik.validate()?;
        if self.latents.len() != lik.latent_count() {
            return validation(format!(
                "{} likelihood needs {} latent functions, state has {}",
                lik.name(),
                lik.latent_count(),
                self.latents.len()
            ));
        }
        Ok(())
    }

    /// Restores the sorted-inducing invariant after an optimiser step,
    /// permuting every `q(u_j)` to match. Returns true when anything moved.
    pub(crate) fn canonicalize(&mut self) -> Result<bool> {
        let m = self.inducing.len();
        let mut changed = false;
        for q in &mut self.latents {
            for i in 0..m {
                if q.chol[(i, i)] < 0.0 {
                    for r in i..m {
                        q.chol[(r, i)] = -q.chol[(r, i)];
                    }
                    changed = true;
                }
                if q.chol[(i, i)].abs() < 1e-10 {
                    q.chol[(i, i)] = 1e-10;
                    changed = true;
                }
            }
        }
        if self.inducing.windows(2).all(|w| w[0] < w[1]) {
            return Ok(changed);
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| self.inducing[a].total_cmp(&self.inducing[b]));
        let mut z: Vec<f64> = order.iter().map(|&i| self.inducing[i]).collect();
        for i in 1..m {
            if z[i] <= z[i - 1] {
                z[i] = z[i - 1] + 1e-9 * z[i - 1].abs().max(1.0);
            }
        }
        self.inducing = z;
        for q in &mut self.latents {
            let s = q.covariance();
            let permuted = DMatrix::from_fn(m, m, |r, c| s[(order[r], order[c])]);
            q.mean = DVector::from_fn(m, |r, _| q.mean[order[r]]);
            q.chol = robust_cholesky(&permuted)?.l();
        }
        Ok(true)
    }
}

/// KL(N(m_q, L_q L_qᵀ) ‖ N(m_p, L_p L_pᵀ)).
pub fn kl_gaussian(m_q: &DVector<f64>, l_q: &DMatrix<f64>, m_p: &DVector<f64>, l_p: &DMatrix<f64>) -> Result<f64> {
    let k = m_q.len();
    if m_p.len() != k || l_q.shape() != (k, k) || l_p.shape() != (k, k) {
        return validation("KL arguments have mismatched dimensions");
    }
    if (0..k).any(|i| l_q[(i, i)] == 0.0 || l_p[(i, i)] <= 0.0) {
        return validation("KL arguments need non-singular factors");
    }
    let lp_inv_lq = l_p
        .solve_lower_triangular(l_q)
        .ok_or_else(|| Error::Validation("singular prior factor".into()))?;
    let diff = m_p - m_q;
    let w = l_p
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Validation("singular prior factor".into()))?;
    let trace = lp_inv_lq.norm_squared();
    let maha = w.norm_squared();
    let logdet_p: f64 = (0..k).map(|i| l_p[(i, i)].ln()).sum::<f64>() * 2.0;
    let logdet_q: f64 = (0..k).map(|i| l_q[(i, i)].abs().ln()).sum::<f64>() * 2.0;
    Ok((0.5 * (trace + maha - k as f64 + logdet_p - logdet_q)).max(0.0))
}

/// Per-point marginals of `q(f_j(x))`:
/// `μ = A m`, `σ² = k(x,x) − A K_zz Aᵀ + A S Aᵀ`, `A = K_xz K_zz⁻¹`.
pub fn latent_marginals(state: &VariationalState, latent: usize, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = state
        .latents
        .get(latent)
        .ok_or_else(|| Error::Validation(format!("latent index {latent} out of range")))?;
    state.check_structure()?;
    if x.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let kxz = q.kernel.matrix(x, &state.inducing)?;
    let kzz = q.kernel.matrix_unchecked(&state.inducing, &state.inducing);
    let factor = robust_cholesky(&kzz)?;
    let at = factor.solve(&kxz.transpose());
    let mean = at.tr_mul(&q.mean);
    let as_ = q.covariance() * &at;
    let var = (0..x.len())
        .map(|i| {
            let mut v = q.kernel.eval(x[i], x[i]);
            for k in 0..state.inducing.len() {
                v += at[(k, i)] * (as_[(k, i)] - kxz[(i, k)]);
            }
            v.max(MIN_VARIANCE)
        })
        .collect();
    Ok((mean.iter().copied().collect(), var))
}

/// Optimal `q(u)` for a Gaussian likelihood with fixed hyperparameters:
/// `S = K_zz B⁻¹ K_zz`, `m = σ⁻² K_zz B⁻¹ K_zx y`, `B = K_zz + σ⁻² K_zx K_xz`,
/// evaluated through `B = L C Lᵀ` with `K_zz = L Lᵀ` (jittered as in the bound).
pub fn optimal_gaussian_q(
    inducing: &[f64],
    kernel: &KernelSpec,
    noise_variance: f64,
    x: &[f64],
    y: &[f64],
) -> Result<LatentQ> {
    if x.len() != y.len() {
        return validation("inputs and targets differ in length");
    }
    let kzz = kernel.matrix(inducing, inducing)?;
    let lz = robust_cholesky(&kzz)?.l();
    let a = lz.solve_lower_triangular(&kernel.matrix(inducing, x)?).expect("factor diagonal is positive");
    let mut c = &a * a.transpose() / noise_variance;
    for i in 0..c.nrows() {
        c[(i, i)] += 1.0;
    }
    let fc = robust_cholesky(&c)?;
    let yv = DVector::from_column_slice(y);
    let mean = &lz * fc.solve_vec(&(&a * yv)) / noise_variance;
    // S = L C⁻¹ Lᵀ = MᵀM with M = L_C⁻¹ Lᵀ; the R factor of M is the
    // transposed Cholesky factor of S.
    let m = fc.chol.l().solve_lower_triangular(&lz.transpose()).expect("factor diagonal is positive");
    let mut chol = m.qr().r().transpose();
    for j in 0..chol.ncols() {
        if chol[(j, j)] < 0.0 {
            chol.column_mut(j).neg_mut();
        }
    }
    Ok(LatentQ { kernel: kernel.clone(), mean, chol })
}

/// Replaces `q(u)` by its closed-form optimum for the current kernel and
/// noise. Only defined for the Gaussian likelihood.
pub fn with_optimal_gaussian_q(state: &VariationalState, lik: &LikelihoodSpec, x: &[f64], y: &[f64]) -> Result<VariationalState> {
    let LikelihoodSpec::Gaussian { noise_variance } = *lik else {
        return validation(format!("closed-form q(u) needs a Gaussian likelihood, got {}", lik.name()));
    };
    state.validate(lik)?;
    let mut out = state.clone();
    for q in &mut out.latents {
        *q = optimal_gaussian_q(&state.inducing, &q.kernel, noise_variance, x, y)?;
    }
    Ok(out)
}

/// `E_q[log p(y | f)]` with an `h`-point rule per latent dimension.
pub fn expected_log_lik(lik: &LikelihoodSpec, y: f64, mean: &[f64], var: &[f64], h: usize) -> Result<f64> {
    let gh = GaussHermite::new(h)?;
    lik.expected_log_lik(y, mean, var, &gh)
}
