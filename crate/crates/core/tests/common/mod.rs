//! Helpers shared by integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use powergp::hbp::{hbp_log_density, BetaPrediction};

/// `∫₀^½ f(y) dy` by tanh-sinh quadrature with step halving.
pub fn tanh_sinh_half(f: &dyn Fn(f64) -> f64) -> f64 {
    const T_MAX: f64 = 6.0;
    let node = |t: f64| {
        let s = FRAC_PI_2 * t.sinh();
        let e = (-2.0 * s.abs()).exp();
        let y = if s >= 0.0 { 0.25 * (1.0 + (1.0 - e) / (1.0 + e)) } else { 0.5 * e / (1.0 + e) };
        let w = 0.25 * FRAC_PI_2 * t.cosh() * 4.0 * e / ((1.0 + e) * (1.0 + e));
        (y, w)
    };
    let term = |t: f64| {
        let (y, w) = node(t);
        if y > 0.0 && y < 0.5 && w > 0.0 {
            w * f(y)
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let mut sum: f64 = (0..=(T_MAX / h) as i64).flat_map(|k| [k, -k]).skip(1).map(|k| term(k as f64 * h)).sum();
    let mut estimate = h * sum;
    for level in 0..9 {
        h *= 0.5;
        let odd = (T_MAX / h) as i64;
        sum += (1..=odd).step_by(2).map(|k| term(k as f64 * h) + term(-(k as f64) * h)).sum::<f64>();
        let next = h * sum;
        let change = (next - estimate).abs();
        estimate = next;
        if level >= 2 && change < 1e-12 {
            break;
        }
    }
    estimate
}

/// Total predictive mass over (0, 1). The upper half is integrated through
/// the mirrored prediction, `p(y) = p̃(1 − y)` with shapes swapped, so
/// points near one keep full precision.
pub fn predictive_mass(pred: &BetaPrediction) -> f64 {
    let mirror = BetaPrediction {
        alpha_star: pred.beta_star,
        beta_star: pred.alpha_star,
        mixture: pred.mixture.as_ref().map(|c| c.iter().map(|&(a, b)| (b, a)).collect()),
        mean: 1.0 - pred.mean,
        lower95: 1.0 - pred.upper95,
        upper95: 1.0 - pred.lower95,
    };
    let lower = tanh_sinh_half(&|y| hbp_log_density(pred, y).unwrap().exp());
    let upper = tanh_sinh_half(&|u| hbp_log_density(&mirror, u).unwrap().exp());
    lower + upper
}
