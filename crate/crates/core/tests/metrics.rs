use proptest::prelude::*;

use powergp::data::{synth_generate, SynthConfig};
use powergp::likelihoods::beta_log_pdf;
use powergp::metrics::{gaussian_jll, joint_log_likelihood, nmse};

#[test]
fn true_beta_beats_moment_matched_gaussian() {
    for seed in 0..50u64 {
        let data = synth_generate(&SynthConfig { n: 400, seed, ..SynthConfig::default() }).unwrap();
        let truth = data.ground_truth.as_ref().unwrap();
        let y = data.targets();
        let beta: Vec<f64> = y.iter().zip(truth).map(|(&v, t)| beta_log_pdf(v, t.alpha, t.beta)).collect();
        let mean: Vec<f64> = truth.iter().map(|t| t.mean).collect();
        let var: Vec<f64> = truth.iter().map(|t| t.mean * (1.0 - t.mean) / (t.alpha + t.beta + 1.0)).collect();
        let beta_jll = joint_log_likelihood(&beta).unwrap();
        let gauss_jll = gaussian_jll(&y, &mean, &var).unwrap();
        assert!(beta_jll >= gauss_jll, "replicate {seed}: {beta_jll} < {gauss_jll}");
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let y = [0.1, 0.4, 0.35, 0.9];
    assert_eq!(nmse(&y, &y).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn jll_is_additive(values in proptest::collection::vec(-50.0f64..5.0, 2..200), cut in 1usize..199) {
        let cut = cut.min(values.len() - 1);
        let whole = joint_log_likelihood(&values).unwrap();
        let parts = joint_log_likelihood(&values[..cut]).unwrap() + joint_log_likelihood(&values[cut..]).unwrap();
        let scale: f64 = values.iter().map(|v| v.abs()).sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn nmse_is_scale_free(
        pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..60),
        scale in 0.01f64..100.0,
        shift in -10.0f64..10.0,
    ) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let base = nmse(&y, &y_hat).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
        let hs: Vec<f64> = y_hat.iter().map(|v| v * scale + shift).collect();
        let moved = nmse(&ys, &hs).unwrap();
        prop_assert!((moved * scale - base).abs() <= 1e-9 * base.max(1.0), "{} vs {}", moved * scale, base);
    }
}
