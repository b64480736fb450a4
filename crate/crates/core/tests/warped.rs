use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use powergp::kernels::KernelSpec;
use powergp::metrics::nmse;
use powergp::svgp::TrainConfig;
use powergp::warped::{inv_logit, logit_warp, warped_fit, WarpConfig};

fn kernels() -> Vec<KernelSpec> {
    vec![KernelSpec::default_power_curve(); 2]
}

fn train_cfg(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, inducing_points: 15, minibatch_size: 100, ..TrainConfig::default() }
}

#[test]
fn constant_half_power_has_zero_warped_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let p = vec![0.5; x.len()];
    let model = warped_fit(&x, &p, kernels(), &WarpConfig::default(), &train_cfg(300)).unwrap();
    assert_eq!(model.clipped_fraction, 0.0);
    let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    let pred = model.predict(&grid).unwrap();
    for (m, c) in pred.warped_mean.iter().zip(&pred.mean) {
        assert!(m.abs() < 0.05, "warped mean {m}");
        assert!((c - 0.5).abs() < 0.0125);
    }
}

/// Warped-space location function used to generate data.
fn location(x: f64) -> f64 {
    4.0 * (x - 0.5) + 0.5 * (6.0 * x).sin()
}

#[test]
fn recovers_the_warped_location() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..1500).map(|_| rng.random::<f64>()).collect();
    let z: Vec<f64> = x
        .iter()
        .map(|&v| location(v) + (0.1 + 0.4 * v) * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let p = inv_logit(&z);
    let cfg = WarpConfig::default();
    assert!(logit_warp(&p, &cfg).unwrap().iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));

    let model = warped_fit(&x, &p, kernels(), &cfg, &train_cfg(1500)).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| 0.02 + 0.96 * i as f64 / 199.0).collect();
    let pred = model.predict(&grid).unwrap();
    let truth: Vec<f64> = grid.iter().map(|&v| location(v)).collect();
    let score = nmse(&truth, &pred.warped_mean).unwrap();
    assert!(score < 2.0, "NMSE {score}");

    // Noise grows with x, so the predicted spread should too.
    let first = pred.warped_sd[10];
    let last = pred.warped_sd[190];
    assert!(last > first, "spread {first} then {last}");
    for i in 0..grid.len() {
        assert!(pred.lower[i] < pred.mean[i] && pred.mean[i] < pred.upper[i]);
    }
}

#[test]
fn identical_seeds_give_identical_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let p: Vec<f64> = x.iter().map(|&v| (v * v + 0.05 * rng.random::<f64>()).min(1.0)).collect();
    let a = warped_fit(&x, &p, kernels(), &WarpConfig::default(), &train_cfg(100)).unwrap();
    let b = warped_fit(&x, &p, kernels(), &WarpConfig::default(), &train_cfg(100)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}

#[test]
fn wrong_kernel_count_is_rejected() {
    let err = warped_fit(&[0.1, 0.2], &[0.3, 0.4], vec![KernelSpec::default_power_curve()], &WarpConfig::default(), &train_cfg(10));
    assert!(matches!(err, Err(powergp::Error::Validation(_))));
}
