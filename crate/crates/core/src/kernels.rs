//! Covariance functions over scalar inputs.
//!
//! Every kernel exposes its hyperparameters in log space; gradients returned
//! by [`KernelSpec::accumulate`] and [`KernelSpec::backprop`] are with respect
//! to those log values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum KernelSpec {
    SquaredExponential { variance: f64, lengthscale: f64 },
    Matern32 { variance: f64, lengthscale: f64 },
    Linear { variance: f64 },
    Sum(Vec<KernelSpec>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum KernelRepr {
    SquaredExponential { variance: f64, lengthscale: f64 },
    Matern32 { variance: f64, lengthscale: f64 },
    Linear { variance: f64 },
    Sum { parts: Vec<KernelRepr> },
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = crate::error::Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        match r {
            KernelRepr::SquaredExponential { variance, lengthscale } => {
                KernelSpec::squared_exponential(variance, lengthscale)
            }
            KernelRepr::Matern32 { variance, lengthscale } => KernelSpec::matern32(variance, lengthscale),
            KernelRepr::Linear { variance } => KernelSpec::linear(variance),
            KernelRepr::Sum { parts } => {
                let parts = parts.into_iter().map(KernelSpec::try_from).collect::<Result<Vec<_>>>()?;
                KernelSpec::sum(parts)
            }
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::SquaredExponential { variance, lengthscale } => {
                KernelRepr::SquaredExponential { variance, lengthscale }
            }
            KernelSpec::Matern32 { variance, lengthscale } => KernelRepr::Matern32 { variance, lengthscale },
            KernelSpec::Linear { variance } => KernelRepr::Linear { variance },
            KernelSpec::Sum(parts) => KernelRepr::Sum {
                parts: parts.into_iter().map(KernelRepr::from).collect(),
            },
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        validation(format!("kernel {name} must be finite and strictly positive, got {v}"))
    }
}

fn check_inputs(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return validation("kernel inputs must be non-empty");
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return validation(format!("kernel input {i} is not finite ({})", xs[i]));
    }
    Ok(())
}

impl KernelSpec {
    pub fn squared_exponential(variance: f64, lengthscale: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        check_positive("lengthscale", lengthscale)?;
        Ok(KernelSpec::SquaredExponential { variance, lengthscale })
    }

    pub fn matern32(variance: f64, lengthscale: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        check_positive("lengthscale", lengthscale)?;
        Ok(KernelSpec::Matern32 { variance, lengthscale })
    }

    pub fn linear(variance: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        Ok(KernelSpec::Linear { variance })
    }

    /// Builds a sum kernel, flattening nested sums.
    pub fn sum(parts: Vec<KernelSpec>) -> Result<Self> {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                KernelSpec::Sum(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() < 2 {
            return validation("a sum kernel needs at least two parts");
        }
        Ok(KernelSpec::Sum(flat))
    }

    /// Matérn 3/2 plus linear, the default for every latent function.
    pub fn default_power_curve() -> Self {
        KernelSpec::Sum(vec![
            KernelSpec::Matern32 { variance: 1.0, lengthscale: 0.2 },
            KernelSpec::Linear { variance: 0.1 },
        ])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscale }
            | KernelSpec::Matern32 { variance, lengthscale } => {
                check_positive("variance", *variance)?;
                check_positive("lengthscale", *lengthscale)
            }
            KernelSpec::Linear { variance } => check_positive("variance", *variance),
            KernelSpec::Sum(parts) => {
                if parts.len() < 2 {
                    return validation("a sum kernel needs at least two parts");
                }
                parts.iter().try_for_each(KernelSpec::validate)
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            KernelSpec::SquaredExponential { variance, lengthscale } => {
                let d = (x - y) / lengthscale;
                variance * (-0.5 * d * d).exp()
            }
            KernelSpec::Matern32 { variance, lengthscale } => {
                let a = SQRT3 * (x - y).abs() / lengthscale;
                variance * (1.0 + a) * (-a).exp()
            }
            KernelSpec::Linear { variance } => variance * (x * y),
            KernelSpec::Sum(ref parts) => parts.iter().map(|p| p.eval(x, y)).sum(),
        }
    }

    /// Dense covariance block `K[i][j] = k(xs[i], ys[j])`.
    pub fn matrix(&self, xs: &[f64], ys: &[f64]) -> Result<DMatrix<f64>> {
        check_inputs(xs)?;
        check_inputs(ys)?;
        Ok(self.matrix_unchecked(xs, ys))
    }

    pub(crate) fn matrix_unchecked(&self, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), ys.len(), |i, j| self.eval(xs[i], ys[j]))
    }

    /// `k(xs[i], ys[i])` for `i < min(len)`; the diagonal of [`Self::matrix`].
    pub fn diagonal(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        check_inputs(xs)?;
        check_inputs(ys)?;
        Ok(xs.iter().zip(ys).map(|(&x, &y)| self.eval(x, y)).collect())
    }

    /// Prior variances `k(x, x)`.
    pub fn self_variance(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x, x)).collect()
    }

    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential { .. } | KernelSpec::Matern32 { .. } => 2,
            KernelSpec::Linear { .. } => 1,
            KernelSpec::Sum(parts) => parts.iter().map(KernelSpec::n_params).sum(),
        }
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_log_params(&mut out);
        out
    }

    fn push_log_params(&self, out: &mut Vec<f64>) {
        match *self {
            KernelSpec::SquaredExponential { variance, lengthscale }
            | KernelSpec::Matern32 { variance, lengthscale } => {
                out.push(variance.ln());
                out.push(lengthscale.ln());
            }
            KernelSpec::Linear { variance } => out.push(variance.ln()),
            KernelSpec::Sum(ref parts) => parts.iter().for_each(|p| p.push_log_params(out)),
        }
    }

    /// Overwrites hyperparameters from log values, consuming `n_params()`
    /// entries of `p`.
    pub fn set_log_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return validation(format!("expected {} kernel parameters, got {}", self.n_params(), p.len()));
        }
        self.set_from(p);
        self.validate()
    }

    fn set_from(&mut self, p: &[f64]) -> usize {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscale }
            | KernelSpec::Matern32 { variance, lengthscale } => {
                *variance = p[0].exp();
                *lengthscale = p[1].exp();
                2
            }
            KernelSpec::Linear { variance } => {
                *variance = p[0].exp();
                1
            }
            KernelSpec::Sum(parts) => {
                let mut off = 0;
                for part in parts.iter_mut() {
                    off += part.set_from(&p[off..]);
                }
                off
            }
        }
    }

    /// Adds `weight · ∂k(x, y)/∂log θ` into `dparams` and returns the partial
    /// derivatives `(∂k/∂x, ∂k/∂y)`.
    pub fn accumulate(&self, x: f64, y: f64, weight: f64, dparams: &mut [f64]) -> (f64, f64) {
        match *self {
            KernelSpec::SquaredExponential { variance, lengthscale } => {
                let d = x - y;
                let l2 = lengthscale * lengthscale;
                let k = variance * (-0.5 * d * d / l2).exp();
                dparams[0] += weight * k;
                dparams[1] += weight * k * d * d / l2;
                let dx = -k * d / l2;
                (dx, -dx)
            }
            KernelSpec::Matern32 { variance, lengthscale } => {
                let d = x - y;
                let a = SQRT3 * d.abs() / lengthscale;
                let e = (-a).exp();
                dparams[0] += weight * variance * (1.0 + a) * e;
                dparams[1] += weight * variance * a * a * e;
                let dx = -3.0 * variance * d * e / (lengthscale * lengthscale);
                (dx, -dx)
            }
            KernelSpec::Linear { variance } => {
                dparams[0] += weight * variance * x * y;
                (variance * y, variance * x)
            }
            KernelSpec::Sum(ref parts) => {
                let mut off = 0;
                let (mut gx, mut gy) = (0.0, 0.0);
                for part in parts {
                    let n = part.n_params();
                    let (a, b) = part.accumulate(x, y, weight, &mut dparams[off..off + n]);
                    gx += a;
                    gy += b;
                    off += n;
                }
                (gx, gy)
            }
        }
    }

    /// Back-propagates an upstream gradient `g` (same shape as
    /// `matrix(xs, ys)`) into log-hyperparameters and, optionally, inputs.
    pub fn backprop(
        &self,
        xs: &[f64],
        ys: &[f64],
        g: &DMatrix<f64>,
        dparams: &mut [f64],
        mut dxs: Option<&mut [f64]>,
        mut dys: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(g.shape(), (xs.len(), ys.len()));
        for j in 0..ys.len() {
            for i in 0..xs.len() {
                let w = g[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let (kx, ky) = self.accumulate(xs[i], ys[j], w, dparams);
                if let Some(d) = dxs.as_deref_mut() {
                    d[i] += w * kx;
                }
                if let Some(d) = dys.as_deref_mut() {
                    d[j] += w * ky;
                }
            }
        }
    }

    /// Back-propagation for the prior variances `k(x_i, x_i)`.
    pub fn backprop_diag(&self, xs: &[f64], g: &[f64], dparams: &mut [f64], mut dxs: Option<&mut [f64]>) {
        for (i, (&x, &w)) in xs.iter().zip(g).enumerate() {
            if w == 0.0 {
                continue;
            }
            let (kx, ky) = self.accumulate(x, x, w, dparams);
            if let Some(d) = dxs.as_deref_mut() {
                d[i] += w * (kx + ky);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn se(v: f64, l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(v, l).unwrap()
    }

    #[test]
    fn squared_exponential_examples() {
        assert_eq!(se(2.0, 1.0).eval(3.0, 3.0), 2.0);
        assert!((se(1.0, 1.0).eval(0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((se(1.0, 1.0).eval(0.0, 1.0) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn linear_example() {
        assert!((KernelSpec::linear(0.5).unwrap().eval(2.0, 3.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn matern_closed_form() {
        let k = KernelSpec::matern32(1.5, 0.3).unwrap();
        let r: f64 = 0.2;
        let a = 3f64.sqrt() * r / 0.3;
        assert!((k.eval(0.1, 0.3) - 1.5 * (1.0 + a) * (-a).exp()).abs() < 1e-14);
        assert_eq!(k.eval(0.4, 0.4), 1.5);
    }

    #[test]
    fn matrix_examples() {
        let k = se(1.0, 1.0);
        assert_eq!(k.matrix(&[0.0], &[0.0]).unwrap()[(0, 0)], 1.0);
        let m = k.matrix(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert!((m[(0, 1)] - 0.60653).abs() < 1e-5);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        let d = se(3.0, 1.0).diagonal(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(d, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn rejects_bad_inputs_and_parameters() {
        assert!(se(1.0, 1.0).matrix(&[f64::NAN], &[0.0]).is_err());
        assert!(se(1.0, 1.0).matrix(&[], &[0.0]).is_err());
        assert!(KernelSpec::squared_exponential(0.0, 1.0).is_err());
        assert!(KernelSpec::matern32(1.0, -1.0).is_err());
        assert!(KernelSpec::sum(vec![se(1.0, 1.0)]).is_err());
    }

    #[test]
    fn nested_sums_flatten() {
        let inner = KernelSpec::sum(vec![se(1.0, 1.0), KernelSpec::linear(1.0).unwrap()]).unwrap();
        let outer = KernelSpec::sum(vec![inner, KernelSpec::matern32(1.0, 1.0).unwrap()]).unwrap();
        match outer {
            KernelSpec::Sum(ref p) => assert_eq!(p.len(), 3),
            _ => unreachable!(),
        }
        assert_eq!(outer.n_params(), 5);
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{"type": "sum", "parts": [{"type":"matern32","variance":1.0,"lengthscale":0.2}, {"type":"linear","variance":0.1}]}"#;
        let k: KernelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(k, KernelSpec::default_power_curve());
        let back = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<KernelSpec>(&back).unwrap(), k);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"type":"linear","variance":-1}"#).is_err());
    }

    #[test]
    fn log_params_round_trip() {
        let mut k = KernelSpec::default_power_curve();
        let p = k.log_params();
        k.set_log_params(&[0.1, -0.2, 0.3]).unwrap();
        assert!((k.log_params()[1] + 0.2).abs() < 1e-15);
        k.set_log_params(&p).unwrap();
        let back = k.log_params();
        assert!(back.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    fn arb_kernel() -> impl Strategy<Value = KernelSpec> {
        let v = 0.05f64..5.0;
        let l = 0.05f64..3.0;
        prop_oneof![
            (v.clone(), l.clone()).prop_map(|(v, l)| KernelSpec::SquaredExponential { variance: v, lengthscale: l }),
            (v.clone(), l.clone()).prop_map(|(v, l)| KernelSpec::Matern32 { variance: v, lengthscale: l }),
            v.clone().prop_map(|v| KernelSpec::Linear { variance: v }),
            (v.clone(), l, v).prop_map(|(a, l, b)| KernelSpec::Sum(vec![
                KernelSpec::Matern32 { variance: a, lengthscale: l },
                KernelSpec::Linear { variance: b },
            ])),
        ]
    }

    proptest! {
        #[test]
        fn symmetric(k in arb_kernel(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
            prop_assert_eq!(k.eval(x, y), k.eval(y, x));
        }

        #[test]
        fn positive_semidefinite(k in arb_kernel(), xs in proptest::collection::vec(-2.0f64..2.0, 1..50)) {
            let m = k.matrix(&xs, &xs).unwrap();
            let trace = m.trace();
            let eig = SymmetricEigen::new(m);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-8 * trace, "min eigenvalue {} trace {}", min, trace);
        }

        #[test]
        fn sum_is_linear(a in arb_kernel(), b in arb_kernel(), xs in proptest::collection::vec(-2.0f64..2.0, 1..20)) {
            let s = KernelSpec::sum(vec![a.clone(), b.clone()]).unwrap();
            let ms = s.matrix(&xs, &xs).unwrap();
            let mab = a.matrix(&xs, &xs).unwrap() + b.matrix(&xs, &xs).unwrap();
            for (p, q) in ms.iter().zip(mab.iter()) {
                prop_assert!((p - q).abs() <= 1e-14 * q.abs().max(1.0));
            }
        }

        #[test]
        fn gradients_match_finite_differences(k in arb_kernel(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
            prop_assume!((x - y).abs() > 1e-3);
            let n = k.n_params();
            let mut g = vec![0.0; n];
            let (gx, gy) = k.accumulate(x, y, 1.0, &mut g);
            let h = 1e-6;
            let p0 = k.log_params();
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
            for i in 0..n {
                let mut kp = k.clone();
                let mut km = k.clone();
                let mut pp = p0.clone();
                pp[i] += h;
                kp.set_log_params(&pp).unwrap();
                pp[i] -= 2.0 * h;
                km.set_log_params(&pp).unwrap();
                let fd = (kp.eval(x, y) - km.eval(x, y)) / (2.0 * h);
                prop_assert!(rel(fd, g[i]) < 1e-5, "param {} fd {} analytic {}", i, fd, g[i]);
            }
            let fdx = (k.eval(x + h, y) - k.eval(x - h, y)) / (2.0 * h);
            let fdy = (k.eval(x, y + h) - k.eval(x, y - h)) / (2.0 * h);
            prop_assert!(rel(fdx, gx) < 1e-5);
            prop_assert!(rel(fdy, gy) < 1e-5);
        }
    }
}
