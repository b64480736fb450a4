//! Small dense linear-algebra helpers shared by the GP engines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter levels tried, in order, before a factorization is declared
/// failed. Each level is multiplied by the mean of the matrix diagonal.
pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// A Cholesky factor together with the absolute jitter that made it succeed.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Factorize a symmetric matrix, escalating diagonal jitter through
/// [`JITTER_SCHEDULE`] until the Cholesky succeeds.
pub fn robust_cholesky(k: &DMatrix<f64>) -> Result<Factor> {
    let n = k.nrows();
    let mean_diag = if n == 0 { 0.0 } else { k.diagonal().sum() / n as f64 };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut tried = Vec::with_capacity(JITTER_SCHEDULE.len());
    for rel in JITTER_SCHEDULE {
        let jitter = rel * scale;
        tried.push(jitter);
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let l = chol.l_dirty();
            if (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                return Ok(Factor { chol, jitter });
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitters: tried })
}

/// Pairwise summation with a fixed split point (`len / 2`), so that the sum
/// of a slice equals the sum of its two halves bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        let mut acc = 0.0;
        for x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Lower triangle of `m` (strict upper part zeroed).
pub fn lower_triangle(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..j.min(m.nrows()) {
            out[(i, j)] = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let f = robust_cholesky(&k).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_reports_all_levels() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match robust_cholesky(&k) {
            Err(Error::NotPositiveDefinite { jitters }) => assert_eq!(jitters.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pairwise_sum_splits_exactly() {
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let mid = xs.len() / 2;
        assert_eq!(pairwise_sum(&xs), pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..]));
    }
}
