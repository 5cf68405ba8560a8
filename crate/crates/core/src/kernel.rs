//! Kernel specifications and Gram-matrix helpers shared by kernel CCA and
//! the MMD estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * sq).exp()
            }
        }
    }

    /// Gram matrix between the rows of `x` and the rows of `y`.
    pub fn cross_gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let xr: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
        let yr: Vec<Vec<f64>> = (0..y.nrows()).map(|i| y.row(i).iter().copied().collect()).collect();
        DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| self.eval(&xr[i], &yr[j]))
    }

    pub fn gram(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.cross_gram(x, x)
    }
}

/// Median heuristic: gamma = 1 / median pairwise squared distance between
/// rows (1.0 when the median is zero).
pub fn median_heuristic_gamma(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut sq = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
            sq.push(d);
        }
    }
    if sq.is_empty() {
        return 1.0;
    }
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sq[sq.len() / 2];
    if median > 0.0 {
        1.0 / median
    } else {
        1.0
    }
}

/// Doubly-centers a Gram matrix: H G H with H = I − (1/M)·ones.
pub fn center_gram(g: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    let row_means: Vec<f64> = (0..m).map(|i| g.row(i).sum() / m as f64).collect();
    let total = row_means.iter().sum::<f64>() / m as f64;
    DMatrix::from_fn(m, m, |i, j| g[(i, j)] - row_means[i] - row_means[j] + total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_kernel_is_dot_product() {
        let k = KernelSpec::Linear;
        assert_eq!(k.eval(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }

    #[test]
    fn rbf_kernel_at_zero_distance_is_one() {
        let k = KernelSpec::Rbf { gamma: 0.7 };
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert!((k.eval(&[0.0], &[1.0]) - (-0.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn centered_gram_has_zero_row_sums() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, -1.0, 0.5]);
        let g = center_gram(&KernelSpec::Linear.gram(&x));
        for i in 0..3 {
            assert!(g.row(i).sum().abs() < 1e-12);
        }
    }
}
