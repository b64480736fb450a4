//! ELBO evaluation and its gradient.
//!
//! Gradients flow through the marginal projection by hand-derived adjoints.
//! With upstream gradients `gμ`, `gv` on the marginal means and variances,
//! `A = K_xz K⁻¹`, `α = K⁻¹ m`, `b = Aᵀ gμ` and `P = Aᵀ diag(gv) A`:
//!
//! ```text
//! ∂/∂m    = b − α
//! ∂/∂S    = P − ½ (K⁻¹ − S⁻¹)
//! ∂/∂K_xz = gμ αᵀ + 2 diag(gv) A (S − K) K⁻¹
//! ∂/∂K    = −α bᵀ + P − P S K⁻¹ − K⁻¹ S P − ½ (K⁻¹ − K⁻¹ S K⁻¹ − α αᵀ)
//! ∂/∂k_ii = gv_i
//! ```
//!
//! The trainable vector is laid out per latent as `[m, vech(L), log θ]`,
//! where each row of `vech(L)` ends with the log of its diagonal entry,
//! followed by `Z` and then the likelihood's own parameters.

use nalgebra::{DMatrix, DVector};

use super::quadrature::GaussHermite;
use super::{VariationalState, MIN_VARIANCE};
use crate::error::{validation, Result};
use crate::likelihoods::LikelihoodSpec;
use crate::linalg::{pairwise_sum, robust_cholesky};

#[derive(Clone, Debug)]
pub struct ElboEval {
    pub elbo: f64,
    /// Gradient in the layout of [`VariationalState::pack`]; empty when not requested.
    pub grad: Vec<f64>,
    pub clamped: usize,
}

impl VariationalState {
    pub fn n_params(&self, lik: &LikelihoodSpec) -> usize {
        let m = self.inducing.len();
        let per: usize = self.latents.iter().map(|q| m + m * (m + 1) / 2 + q.kernel.n_params()).sum();
        per + m + lik.n_params()
    }

    /// Flattens every trainable scalar.
    pub fn pack(&self, lik: &LikelihoodSpec) -> Vec<f64> {
        let m = self.inducing.len();
        let mut out = Vec::with_capacity(self.n_params(lik));
        for q in &self.latents {
            out.extend(q.mean.iter());
            for i in 0..m {
                for k in 0..i {
                    out.push(q.chol[(i, k)]);
                }
                out.push(q.chol[(i, i)].ln());
            }
            out.extend(q.kernel.log_params());
        }
        out.extend(&self.inducing);
        if let LikelihoodSpec::Gaussian { noise_variance } = lik {
            out.push(noise_variance.ln());
        }
        out
    }

    /// Inverse of [`Self::pack`]. Does not re-establish invariants.
    pub fn unpack(&mut self, lik: &mut LikelihoodSpec, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params(lik) {
            return validation(format!("expected {} parameters, got {}", self.n_params(lik), p.len()));
        }
        let m = self.inducing.len();
        let mut off = 0;
        for q in &mut self.latents {
            q.mean.copy_from_slice(&p[off..off + m]);
            off += m;
            for i in 0..m {
                for k in 0..i {
                    q.chol[(i, k)] = p[off];
                    off += 1;
                }
                q.chol[(i, i)] = p[off].exp();
                off += 1;
            }
            let np = q.kernel.n_params();
            q.kernel.set_log_params(&p[off..off + np])?;
            off += np;
        }
        self.inducing.copy_from_slice(&p[off..off + m]);
        off += m;
        if let LikelihoodSpec::Gaussian { noise_variance } = lik {
            *noise_variance = p[off].exp();
        }
        Ok(())
    }
}

fn check_batch(state: &VariationalState, lik: &LikelihoodSpec, x: &[f64], y: &[f64], n_total: usize) -> Result<()> {
    state.validate(lik)?;
    if x.is_empty() || x.len() != y.len() {
        return validation("batch must be non-empty with matching inputs and targets");
    }
    if n_total < x.len() {
        return validation("total data size smaller than the batch");
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return validation(format!("batch input {i} is not finite"));
    }
    for &t in y {
        lik.check_target(t)?;
    }
    Ok(())
}

/// `(N_total / B) Σ_batch E_q[log p(y_i | f_i)] − Σ_j KL(q(u_j) ‖ p(u_j))`.
pub fn elbo(state: &VariationalState, lik: &LikelihoodSpec, x: &[f64], y: &[f64], n_total: usize, h: usize) -> Result<f64> {
    let gh = GaussHermite::new(h)?;
    check_batch(state, lik, x, y, n_total)?;
    Ok(evaluate(state, lik, x, y, n_total as f64 / x.len() as f64, &gh, false)?.elbo)
}

/// ELBO and its gradient with respect to every packed parameter.
pub fn elbo_with_grad(
    state: &VariationalState,
    lik: &LikelihoodSpec,
    x: &[f64],
    y: &[f64],
    n_total: usize,
    gh: &GaussHermite,
) -> Result<ElboEval> {
    check_batch(state, lik, x, y, n_total)?;
    evaluate(state, lik, x, y, n_total as f64 / x.len() as f64, gh, true)
}

/// Gradient evaluation for the optimiser, whose iterates may hold unsorted
/// inducing inputs or negative factor diagonals. Targets must already
/// have been checked.
pub(crate) fn elbo_with_grad_unchecked(
    state: &VariationalState,
    lik: &LikelihoodSpec,
    x: &[f64],
    y: &[f64],
    n_total: usize,
    gh: &GaussHermite,
) -> Result<ElboEval> {
    evaluate(state, lik, x, y, n_total as f64 / x.len() as f64, gh, true)
}

/// Unscaled full-data ELBO without the gradient.
pub(crate) fn evaluate_full(
    state: &VariationalState,
    lik: &LikelihoodSpec,
    x: &[f64],
    y: &[f64],
    gh: &GaussHermite,
) -> Result<ElboEval> {
    check_batch(state, lik, x, y, x.len())?;
    evaluate(state, lik, x, y, 1.0, gh, false)
}

struct Forward {
    factor_inv: DMatrix<f64>,
    logdet_k: f64,
    /// K⁻¹ K_zx, M×B.
    at: DMatrix<f64>,
    /// S K⁻¹ K_zx, M×B.
    s_at: DMatrix<f64>,
    s: DMatrix<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    floored: Vec<bool>,
}

fn forward(state: &VariationalState, j: usize, x: &[f64]) -> Result<Forward> {
    let q = &state.latents[j];
    let z = &state.inducing;
    let kzz = q.kernel.matrix_unchecked(z, z);
    let factor = robust_cholesky(&kzz)?;
    let kxz = q.kernel.matrix_unchecked(x, z);
    let at = factor.solve(&kxz.transpose());
    let s = q.covariance();
    let s_at = &s * &at;
    let mean: Vec<f64> = at.tr_mul(&q.mean).iter().copied().collect();
    let m = z.len();
    let mut var = Vec::with_capacity(x.len());
    let mut floored = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        let mut v = q.kernel.eval(xi, xi);
        for k in 0..m {
            v += at[(k, i)] * (s_at[(k, i)] - kxz[(i, k)]);
        }
        floored.push(v < MIN_VARIANCE);
        var.push(v.max(MIN_VARIANCE));
    }
    Ok(Forward { factor_inv: factor.inverse(), logdet_k: factor.log_det(), at, s_at, s, mean, var, floored })
}

fn evaluate(
    state: &VariationalState,
    lik: &LikelihoodSpec,
    x: &[f64],
    y: &[f64],
    scale: f64,
    gh: &GaussHermite,
    want_grad: bool,
) -> Result<ElboEval> {
    let n_lat = state.latents.len();
    let b = x.len();
    let m = state.inducing.len();
    let fw: Vec<Forward> = (0..n_lat).map(|j| forward(state, j, x)).collect::<Result<_>>()?;

    let mut ell = Vec::with_capacity(b);
    let mut g_mean = vec![vec![0.0; b]; n_lat];
    let mut g_var = vec![vec![0.0; b]; n_lat];
    let mut d_log_noise = Vec::with_capacity(b);
    let mut clamped = 0;
    let mut mu = [0.0; 2];
    let mut var = [0.0; 2];
    for i in 0..b {
        for j in 0..n_lat {
            mu[j] = fw[j].mean[i];
            var[j] = fw[j].var[i];
        }
        let e = lik.expectation(y[i], &mu[..n_lat], &var[..n_lat], gh);
        ell.push(e.value);
        d_log_noise.push(e.d_log_noise);
        clamped += e.clamped;
        for j in 0..n_lat {
            g_mean[j][i] = scale * e.d_mean[j];
            g_var[j][i] = if fw[j].floored[i] { 0.0 } else { scale * e.d_var[j] };
        }
    }

    let mut kl_total = 0.0;
    for (q, f) in state.latents.iter().zip(&fw) {
        // KL(N(m, S) ‖ N(0, K)) with S = L Lᵀ
        let trace = f.factor_inv.component_mul(&f.s).sum();
        let maha = q.mean.dot(&(&f.factor_inv * &q.mean));
        let logdet_s: f64 = 2.0 * (0..m).map(|i| q.chol[(i, i)].abs().ln()).sum::<f64>();
        kl_total += 0.5 * (trace + maha - m as f64 + f.logdet_k - logdet_s);
    }
    let elbo = scale * pairwise_sum(&ell) - kl_total;

    if !want_grad {
        return Ok(ElboEval { elbo, grad: Vec::new(), clamped });
    }

    let mut grad = Vec::with_capacity(state.n_params(lik));
    let mut dz = vec![0.0; m];
    let mut dz_second = vec![0.0; m];
    for (j, (q, f)) in state.latents.iter().zip(&fw).enumerate() {
        let gmu = DVector::from_column_slice(&g_mean[j]);
        let gv = &g_var[j];
        let kinv = &f.factor_inv;
        let alpha = kinv * &q.mean;
        let bvec = &f.at * &gmu;
        // P = Aᵀ diag(gv) A
        let mut at_gv = f.at.clone();
        for (i, &g) in gv.iter().enumerate() {
            at_gv.column_mut(i).scale_mut(g);
        }
        let p = &at_gv * f.at.transpose();

        let dm = &bvec - &alpha;
        // ∂/∂L = 2 (∂/∂S) L restricted to the lower triangle
        let mut dl = 2.0 * &p * &q.chol - kinv * &q.chol;
        for i in 0..m {
            dl[(i, i)] += 1.0 / q.chol[(i, i)];
        }

        // ∂/∂K_xz, stored transposed (M×B)
        let mut g_kzx = (kinv * &f.s_at - &f.at) * 2.0;
        for (i, &g) in gv.iter().enumerate() {
            g_kzx.column_mut(i).scale_mut(g);
        }
        g_kzx += &alpha * gmu.transpose();

        let ps_kinv = &p * &f.s * kinv;
        let kinv_s_kinv = kinv * &f.s * kinv;
        let g_k = -&alpha * bvec.transpose() + &p - &ps_kinv - ps_kinv.transpose()
            - (kinv - &kinv_s_kinv - &alpha * alpha.transpose()) * 0.5;

        let mut dtheta = vec![0.0; q.kernel.n_params()];
        q.kernel.backprop(&state.inducing, &state.inducing, &g_k, &mut dtheta, Some(&mut dz), Some(&mut dz_second));
        q.kernel.backprop(x, &state.inducing, &g_kzx.transpose(), &mut dtheta, None, Some(&mut dz));
        q.kernel.backprop_diag(x, gv, &mut dtheta, None);

        grad.extend(dm.iter());
        for i in 0..m {
            for k in 0..i {
                grad.push(dl[(i, k)]);
            }
            grad.push(dl[(i, i)] * q.chol[(i, i)]);
        }
        grad.extend(dtheta);
    }
    grad.extend(dz.iter().zip(&dz_second).map(|(a, b)| a + b));
    if matches!(lik, LikelihoodSpec::Gaussian { .. }) {
        grad.push(scale * pairwise_sum(&d_log_noise));
    }
    debug_assert_eq!(grad.len(), state.n_params(lik));
    Ok(ElboEval { elbo, grad, clamped })
}
