use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use powergp::exact_gp::{fit_exact, ExactFitConfig, ExactGp};
use powergp::kernels::KernelSpec;
use powergp::likelihoods::LikelihoodSpec;
use powergp::svgp::{
    elbo, expected_log_lik, latent_marginals, optimal_gaussian_q, train_svgp, with_optimal_gaussian_q, TrainConfig, VariationalState,
};

/// Draws targets from the GP prior of `kernel` plus Gaussian noise.
fn prior_sample(kernel: &KernelSpec, noise: f64, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut k = kernel.matrix(x, x).unwrap();
    for i in 0..x.len() {
        k[(i, i)] += noise + 1e-10;
    }
    let l = k.cholesky().expect("prior covariance is positive definite").l();
    let z = DVector::from_iterator(x.len(), (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (l * z).iter().copied().collect()
}

fn sorted_uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    x.sort_by(f64::total_cmp);
    x
}

#[test]
fn trained_elbo_approaches_exact_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let kernel = KernelSpec::default_power_curve();
    let noise = 0.01;
    let x = sorted_uniform(500, &mut rng);
    let y = prior_sample(&kernel, noise, &x, &mut rng);

    let exact = fit_exact(&ExactGp::new(kernel.clone(), noise, x.clone(), y.clone()).unwrap(), &ExactFitConfig::default()).unwrap();
    let evidence = -exact.final_nlml;

    let cfg = TrainConfig { inducing_points: 30, ..TrainConfig::default() };
    let lik = LikelihoodSpec::gaussian(noise).unwrap();
    let state = VariationalState::from_inputs(&x, 30, vec![kernel]).unwrap();
    let state = with_optimal_gaussian_q(&state, &lik, &x, &y).unwrap();
    let trained = train_svgp(&state, &lik, &x, &y, &cfg).unwrap();
    let bound = trained.trace.final_elbo;
    assert!(bound <= evidence + 1e-6, "ELBO {bound} exceeds optimised evidence {evidence}");
    let rel = (evidence - bound).abs() / evidence.abs();
    assert!(rel < 0.05, "ELBO {bound} vs evidence {evidence}: relative gap {rel}");
}

fn small_problem(seed: u64) -> (VariationalState, LikelihoodSpec, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sorted_uniform(80, &mut rng);
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let state = VariationalState::from_inputs(&x, 8, vec![KernelSpec::default_power_curve()]).unwrap();
    (state, LikelihoodSpec::gaussian(0.05).unwrap(), x, y)
}

#[test]
fn zero_iterations_return_the_input_state() {
    let (state, lik, x, y) = small_problem(1);
    let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
    let out = train_svgp(&state, &lik, &x, &y, &cfg).unwrap();
    assert_eq!(out.state, state);
    assert_eq!(out.likelihood, lik);
    assert_eq!(out.trace.initial_elbo, out.trace.final_elbo);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let cfg = TrainConfig { iterations: 300, minibatch_size: 16, trace_every: 50, ..TrainConfig::default() };
    for lik in [LikelihoodSpec::gaussian(0.05).unwrap(), LikelihoodSpec::HeteroGaussian] {
        let (mut state, _, x, y) = small_problem(2);
        if lik.latent_count() == 2 {
            state = VariationalState::from_inputs(&x, 8, vec![KernelSpec::default_power_curve(); 2]).unwrap();
        }
        let a = train_svgp(&state, &lik, &x, &y, &cfg).unwrap();
        let b = train_svgp(&state, &lik, &x, &y, &cfg).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace.rows.len(), 7);
        let c = train_svgp(&state, &lik, &x, &y, &TrainConfig { seed: 99, ..cfg.clone() }).unwrap();
        assert_ne!(a.trace.to_csv(), c.trace.to_csv());
    }
}

#[test]
fn training_never_lowers_the_elbo() {
    let (state, lik, x, y) = small_problem(3);
    let cfg = TrainConfig { iterations: 200, minibatch_size: 20, learning_rate: 0.05, trace_every: 20, ..TrainConfig::default() };
    let out = train_svgp(&state, &lik, &x, &y, &cfg).unwrap();
    assert!(out.trace.final_elbo >= out.trace.initial_elbo);
    assert!(out.trace.final_elbo > out.trace.initial_elbo + 1.0);
    let recomputed = elbo(&out.state, &out.likelihood, &x, &y, x.len(), cfg.quadrature_points).unwrap();
    assert!((recomputed - out.trace.final_elbo).abs() < 1e-9 * recomputed.abs().max(1.0));
    out.state.validate(&out.likelihood).unwrap();
}

#[test]
fn invalid_config_lists_problems() {
    let (state, lik, x, y) = small_problem(4);
    let cfg = TrainConfig { minibatch_size: 0, learning_rate: 0.0, ..TrainConfig::default() };
    match train_svgp(&state, &lik, &x, &y, &cfg) {
        Err(powergp::Error::Config(list)) => assert_eq!(list.len(), 2, "{list:?}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn prior_state_elbo_is_expected_log_likelihood() {
    let (mut state, lik, x, y) = small_problem(5);
    state = VariationalState::prior(x[..8].to_vec(), state.latents.iter().map(|q| q.kernel.clone()).collect()).unwrap();
    let (mu, var) = latent_marginals(&state, 0, &x).unwrap();
    let sum: f64 = (0..x.len()).map(|i| expected_log_lik(&lik, y[i], &[mu[i]], &[var[i]], 20).unwrap()).sum();
    let e = elbo(&state, &lik, &x, &y, x.len(), 20).unwrap();
    assert!((e - sum).abs() < 1e-8 * sum.abs(), "{e} vs {sum}");
}

/// Monte-Carlo estimate of `E[log p(y | f)]` and its standard error.
fn monte_carlo(lik: &LikelihoodSpec, y: f64, mean: [f64; 2], var: [f64; 2], seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let f1 = mean[0] + var[0].sqrt() * rng.sample::<f64, _>(StandardNormal);
        let f2 = mean[1] + var[1].sqrt() * rng.sample::<f64, _>(StandardNormal);
        let v = lik.log_density(y, &[f1, f2]).unwrap();
        s += v;
        s2 += v * v;
    }
    let m = s / n as f64;
    let sd = (s2 / n as f64 - m * m).sqrt();
    (m, sd / (n as f64).sqrt())
}

#[test]
fn two_latent_quadrature_matches_monte_carlo() {
    let cases = [
        (LikelihoodSpec::HeteroGaussian, 0.3, [0.1, -1.0], [0.2, 0.3]),
        (LikelihoodSpec::HeteroGaussian, -1.2, [0.5, 0.4], [0.5, 0.1]),
        (LikelihoodSpec::Beta, 0.3, [1.0, 1.5], [0.2, 0.3]),
        (LikelihoodSpec::Beta, 0.9, [2.0, 0.2], [0.4, 0.4]),
    ];
    for (i, (lik, y, mean, var)) in cases.into_iter().enumerate() {
        let q = expected_log_lik(&lik, y, &mean, &var, 20).unwrap();
        let (mc, se) = monte_carlo(&lik, y, mean, var, 100 + i as u64);
        assert!((q - mc).abs() < 3.0 * se, "case {i}: quadrature {q} vs Monte Carlo {mc} ± {se}");
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> VariationalState {
    let m = rng.random_range(1..=8usize);
    let mut z = sorted_uniform(m, rng);
    z.dedup();
    let kernel = KernelSpec::sum(vec![
        KernelSpec::matern32(rng.random_range(0.2..2.0), rng.random_range(0.05..0.5)).unwrap(),
        KernelSpec::linear(rng.random_range(0.01..1.0)).unwrap(),
    ])
    .unwrap();
    let mut state = VariationalState::prior(z, vec![kernel]).unwrap();
    let m = state.inducing.len();
    let q = &mut state.latents[0];
    q.mean = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(-1.0..1.0)));
    q.chol = DMatrix::from_fn(m, m, |i, k| match i.cmp(&k) {
        std::cmp::Ordering::Greater => rng.random_range(-0.3..0.3),
        std::cmp::Ordering::Equal => rng.random_range(0.05..1.0),
        std::cmp::Ordering::Less => 0.0,
    });
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn elbo_bounds_the_evidence(seed in any::<u64>(), n in 1usize..=50, log_noise in -5.0f64..0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| (4.0 * v).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let state = random_state(&mut rng);
        let noise = log_noise.exp();
        let lik = LikelihoodSpec::gaussian(noise).unwrap();
        let bound = elbo(&state, &lik, &x, &y, n, 20).unwrap();
        let evidence = -ExactGp::new(state.latents[0].kernel.clone(), noise, x, y).unwrap().nlml();
        prop_assert!(bound <= evidence + 1e-8, "ELBO {} exceeds log evidence {}", bound, evidence);
    }

    #[test]
    fn minibatch_scaling_is_unbiased_at_full_batch(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let state = random_state(&mut rng);
        let lik = LikelihoodSpec::gaussian(0.1).unwrap();
        let full = elbo(&state, &lik, &x, &y, 12, 10).unwrap();
        let halves = elbo(&state, &lik, &x[..6], &y[..6], 12, 10).unwrap() + elbo(&state, &lik, &x[6..], &y[6..], 12, 10).unwrap();
        let (mu, var) = latent_marginals(&state, 0, &x[..1]).unwrap();
        let neg_kl = elbo(&state, &lik, &x[..1], &y[..1], 12, 10).unwrap() - 12.0 * expected_log_lik(&lik, y[0], &mu, &var, 10).unwrap();
        // Each half-batch estimate scales its data term by 2; their average
        // recovers the full-batch value.
        prop_assert!((0.5 * halves - full).abs() < 1e-9 * full.abs().max(1.0));
        prop_assert!(neg_kl <= 1e-9);
    }

    #[test]
    fn optimal_q_at_full_capacity_is_tight(seed in any::<u64>(), n in 2usize..=25, log_noise in -4.0f64..0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5 + 0.4 * (rng.random::<f64>() - 0.5)) / n as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).cos() + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        let kernel = KernelSpec::sum(vec![
            KernelSpec::matern32(rng.random_range(0.2..2.0), rng.random_range(0.05..0.5)).unwrap(),
            KernelSpec::linear(rng.random_range(0.01..1.0)).unwrap(),
        ])
        .unwrap();
        let noise = log_noise.exp();
        let mut state = VariationalState::prior(x.clone(), vec![kernel.clone()]).unwrap();
        state.latents[0] = optimal_gaussian_q(&x, &kernel, noise, &x, &y).unwrap();
        let bound = elbo(&state, &LikelihoodSpec::gaussian(noise).unwrap(), &x, &y, n, 20).unwrap();
        let evidence = -ExactGp::new(kernel, noise, x, y).unwrap().nlml();
        prop_assert!((bound - evidence).abs() < 1e-6, "ELBO {} vs evidence {}", bound, evidence);
    }
}
