use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_with_grad_unchecked, evaluate_full, ElboEval};
use super::quadrature::GaussHermite;
use super::VariationalState;
use crate::error::{validation, Error, Result};
use crate::likelihoods::LikelihoodSpec;

const LOG_PARAM_BOUND: f64 = 12.0;
const MIN_LOG_NOISE: f64 = -18.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub quadrature_points: usize,
    pub seed: u64,
    pub inducing_points: usize,
    /// Full-data ELBO is recorded every this many iterations.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            minibatch_size: 256,
            iterations: 2000,
            learning_rate: 0.01,
            quadrature_points: 20,
            seed: 7,
            inducing_points: 50,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, lik: &LikelihoodSpec) -> Result<()> {
        let mut problems = Vec::new();
        if self.minibatch_size == 0 {
            problems.push("train.minibatch_size must be positive".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.quadrature_points == 0 || self.quadrature_points > super::quadrature::MAX_POINTS {
            problems.push(format!("train.quadrature_points must be in 1..=100, got {}", self.quadrature_points));
        }
        if lik.latent_count() == 2 && self.quadrature_points < 2 {
            problems.push("train.quadrature_points must be at least 2 for two-latent likelihoods".to_string());
        }
        if self.inducing_points == 0 {
            problems.push("train.inducing_points must be positive".to_string());
        }
        if self.trace_every == 0 {
            problems.push("train.trace_every must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    /// `(iteration, full-data ELBO)` rows.
    pub rows: Vec<(usize, f64)>,
    pub initial_elbo: f64,
    pub final_elbo: f64,
    /// Quadrature nodes that hit the latent clamp, summed over training.
    pub clamped: usize,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,elbo\n");
        for (i, e) in &self.rows {
            s.push_str(&format!("{i},{e:?}\n"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainedSvgp {
    pub state: VariationalState,
    pub likelihood: LikelihoodSpec,
    pub trace: TrainTrace,
}

fn full_elbo(state: &VariationalState, lik: &LikelihoodSpec, x: &[f64], y: &[f64], gh: &GaussHermite) -> Result<ElboEval> {
    evaluate_full(state, lik, x, y, gh)
}

/// Stochastic-gradient ascent on the ELBO with Adam over every trainable
/// scalar. Minibatches are drawn without replacement from a seeded shuffle.
///
/// Inducing inputs are optimised as the first location plus log gaps, so
/// they stay sorted and can never cross. The
/// returned state is the best of the final iterate and the traced
/// checkpoints, so its full-data ELBO is never below the initial one.
pub fn train_svgp(
    state: &VariationalState,
    lik: &LikelihoodSpec,
    x: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainedSvgp> {
    cfg.validate(lik)?;
    if x.is_empty() || x.len() != y.len() {
        return validation("training data must be non-empty with matching inputs and targets");
    }
    let n = x.len();
    let batch = cfg.minibatch_size.min(n);
    let gh = GaussHermite::new(cfg.quadrature_points)?;

    let mut state = state.clone();
    let mut lik = lik.clone();
    let initial = full_elbo(&state, &lik, x, y, &gh)?;
    if !initial.elbo.is_finite() {
        return Err(Error::Diverged { iteration: 0, trace: vec![(0, initial.elbo)] });
    }
    let mut trace = TrainTrace {
        rows: vec![(0, initial.elbo)],
        initial_elbo: initial.elbo,
        final_elbo: initial.elbo,
        ..Default::default()
    };
    if cfg.iterations == 0 {
        return Ok(TrainedSvgp { state, likelihood: lik, trace });
    }

    let mut best = (initial.elbo, state.clone(), lik.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut bx = vec![0.0; batch];
    let mut by = vec![0.0; batch];
    let mut raw = state.clone();
    let gaps = GapParam { start: raw.n_params(&lik) - raw.inducing.len() - lik.n_params(), len: raw.inducing.len() };
    let mut params = gaps.from_raw(&raw.pack(&lik));
    let mut adam = crate::optim::Adam::new(params.len(), cfg.learning_rate);

    for it in 1..=cfg.iterations {
        for k in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            bx[k] = x[order[cursor]];
            by[k] = y[order[cursor]];
            cursor += 1;
        }
        let eval = elbo_with_grad_unchecked(&raw, &lik, &bx, &by, n, &gh)?;
        if !eval.elbo.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            trace.rows.push((it, eval.elbo));
            return Err(Error::Diverged { iteration: it, trace: trace.rows });
        }
        trace.clamped += eval.clamped;
        let mut neg = eval.grad;
        gaps.chain_grad(&params, &mut neg);
        neg.iter_mut().for_each(|g| *g = -*g);
        adam.step(&mut params, &neg);
        bound_params(&raw, &lik, &mut params);
        raw.unpack(&mut lik, &gaps.to_raw(&params))?;

        if it % cfg.trace_every == 0 || it == cfg.iterations {
            state = raw.clone();
            state.canonicalize()?;
            let e = full_elbo(&state, &lik, x, y, &gh)?.elbo;
            if !e.is_finite() {
                trace.rows.push((it, e));
                return Err(Error::Diverged { iteration: it, trace: trace.rows });
            }
            if it % cfg.trace_every == 0 {
                trace.rows.push((it, e));
                debug!("iteration {it}: full-data ELBO {e:.4}");
            }
            if e > best.0 {
                best = (e, state.clone(), lik.clone());
            }
            if it == cfg.iterations {
                trace.final_elbo = e;
            }
        }
    }
    if trace.clamped > 0 {
        warn!("{} quadrature evaluations hit the latent clamp during training", trace.clamped);
    }
    if best.0 > trace.final_elbo {
        debug!("restoring best checkpoint (ELBO {:.4} > final {:.4})", best.0, trace.final_elbo);
        trace.final_elbo = best.0;
        state = best.1;
        lik = best.2;
    }
    Ok(TrainedSvgp { state, likelihood: lik, trace })
}

fn bound_params(state: &VariationalState, lik: &LikelihoodSpec, p: &mut [f64]) {
    let m = state.inducing.len();
    let mut off = 0;
    for q in &state.latents {
        off += m + m * (m + 1) / 2;
        for v in &mut p[off..off + q.kernel.n_params()] {
            *v = v.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
        }
        off += q.kernel.n_params();
    }
    off += m;
    if matches!(lik, LikelihoodSpec::Gaussian { .. }) {
        p[off] = p[off].clamp(MIN_LOG_NOISE, LOG_PARAM_BOUND);
    }
}

/// Maps the inducing block of a packed vector between absolute locations
/// and `[z_0, ln(z_1 − z_0), …]`.
struct GapParam {
    start: usize,
    len: usize,
}

impl GapParam {
    fn from_raw(&self, p: &[f64]) -> Vec<f64> {
        let mut out = p.to_vec();
        let z = &p[self.start..self.start + self.len];
        for k in 1..self.len {
            out[self.start + k] = (z[k] - z[k - 1]).ln();
        }
        out
    }

    fn to_raw(&self, p: &[f64]) -> Vec<f64> {
        let mut out = p.to_vec();
        for k in 1..self.len {
            out[self.start + k] = out[self.start + k - 1] + p[self.start + k].exp();
        }
        out
    }

    /// Converts a gradient in absolute locations to one in gap coordinates.
    fn chain_grad(&self, p: &[f64], g: &mut [f64]) {
        let block = &mut g[self.start..self.start + self.len];
        let mut tail = 0.0;
        for k in (0..self.len).rev() {
            tail += block[k];
            block[k] = if k == 0 { tail } else { tail * p[self.start + k].exp() };
        }
    }
}
