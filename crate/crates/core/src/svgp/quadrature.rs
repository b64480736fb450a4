use crate::error::{validation, Result};

/// Gauss-Hermite rule normalised for expectations under a standard normal:
/// `E[f(z)] ≈ Σ weights[i] · f(nodes[i])`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub const MAX_POINTS: usize = 100;

impl GaussHermite {
    pub fn new(points: usize) -> Result<Self> {
        let (nodes, weights) = gauss_hermite(points)?;
        Ok(GaussHermite { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Nodes and weights of the `h`-point rule, sorted by node.
///
/// Roots of the physicists' Hermite polynomial are found by Newton iteration
/// on the orthonormal recurrence, then rescaled by √2 (nodes) and 1/√π
/// (weights) for the standard-normal measure.
pub fn gauss_hermite(h: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if h == 0 || h > MAX_POINTS {
        return validation(format!("Gauss-Hermite order must be in 1..={MAX_POINTS}, got {h}"));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let n = h as f64;
    let m = h.div_ceil(2);
    let mut x = vec![0.0; h];
    let mut w = vec![0.0; h];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n + 1.0).sqrt() - 1.855_75 * (2.0 * n + 1.0).powf(-0.166_67),
            1 => z - 1.14 * n.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..h {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[h - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[h - 1 - i] = w[i];
    }
    if h % 2 == 1 {
        x[h / 2] = 0.0;
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut nodes: Vec<f64> = x.iter().map(|v| v * sqrt2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn low_order_rules() {
        let (n, w) = gauss_hermite(1).unwrap();
        assert_eq!(n, vec![0.0]);
        assert!((w[0] - 1.0).abs() < 1e-14);
        let (n, w) = gauss_hermite(2).unwrap();
        assert!((n[0] + 1.0).abs() < 1e-14 && (n[1] - 1.0).abs() < 1e-14);
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
        let gh = GaussHermite::new(2).unwrap();
        assert!((gh.expect(|z| z * z) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn out_of_range() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(101).is_err());
        assert!(gauss_hermite(100).is_ok());
    }

    #[test]
    fn weights_sum_to_one() {
        for h in 1..=100 {
            let (_, w) = gauss_hermite(h).unwrap();
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "h={h} sum={s}");
        }
    }

    #[test]
    fn exact_on_polynomials() {
        for h in 1..=30usize {
            let gh = GaussHermite::new(h).unwrap();
            for deg in 0..(2 * h as u32) {
                let got = gh.expect(|z| z.powi(deg as i32));
                let scale = gh.expect(|z| z.abs().powi(deg as i32));
                let want = if deg % 2 == 1 { 0.0 } else { double_factorial(deg.saturating_sub(1)) };
                let err = (got - want).abs() / scale.max(want.abs()).max(f64::MIN_POSITIVE);
                assert!(err < 1e-9, "h={h} deg={deg} got={got} want={want}");
            }
        }
    }
}
