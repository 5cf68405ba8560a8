//! Kernel CCA solved in the dual over centered Gram matrices, with the
//! standard (G² + κG) regularization of the within-view blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cca::{gen_eig_sym, View};
use crate::error::{Error, Result};
use crate::kernel::{center_gram, KernelSpec};
use crate::pairing::PairedViews;

const SIGN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KccaModel {
    /// M×r dual coefficients, scaled so each training latent component has
    /// unit variance.
    pub alpha_source: DMatrix<f64>,
    pub alpha_target: DMatrix<f64>,
    /// Retained training rows, needed for out-of-sample projection.
    pub train_source: DMatrix<f64>,
    pub train_target: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub kappa: f64,
    pub correlations: Vec<f64>,
    /// Raw training Gram column means and grand mean per view, reused by the
    /// out-of-sample centering correction.
    pub gram_col_means_source: DVector<f64>,
    pub gram_mean_source: f64,
    pub gram_col_means_target: DVector<f64>,
    pub gram_mean_target: f64,
}

fn gram_stats(g: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let m = g.nrows() as f64;
    let col_means = DVector::from_fn(g.ncols(), |j, _| g.column(j).sum() / m);
    let grand = col_means.sum() / g.ncols() as f64;
    (col_means, grand)
}

pub fn fit_kernel_cca(
    p: &PairedViews,
    r: usize,
    kernel: KernelSpec,
    kappa: f64,
) -> Result<KccaModel> {
    let m = p.source_rows.nrows();
    if m < 2 {
        return Err(Error::TooFewRows { need: 2, got: m });
    }
    if kappa <= 0.0 {
        return Err(Error::InvalidConfig("kappa must be positive".to_string()));
    }
    if r == 0 || r > m {
        return Err(Error::RankTooLarge {
            requested: r,
            available: m,
        });
    }

    let raw_s = kernel.gram(&p.source_rows);
    let raw_t = kernel.gram(&p.target_rows);
    if raw_s.iter().chain(raw_t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gram matrix".to_string()));
    }
    let (col_means_s, grand_s) = gram_stats(&raw_s);
    let (col_means_t, grand_t) = gram_stats(&raw_t);
    let gs = center_gram(&raw_s);
    let gt = center_gram(&raw_t);

    let cross = &gs * &gt;
    let two = 2 * m;
    let mut a = DMatrix::zeros(two, two);
    let mut b = DMatrix::zeros(two, two);
    let block_s = &gs * &gs + &gs * kappa;
    let block_t = &gt * &gt + &gt * kappa;
    // centering leaves the all-ones direction in the null space of both
    // blocks; a small jitter keeps the Cholesky factorization alive
    let jitter_s = 1e-10 * (block_s.trace() / m as f64).max(1.0);
    let jitter_t = 1e-10 * (block_t.trace() / m as f64).max(1.0);
    for i in 0..m {
        for j in 0..m {
            a[(i, m + j)] = cross[(i, j)];
            a[(m + j, i)] = cross[(i, j)];
            b[(i, j)] = block_s[(i, j)];
            b[(m + i, m + j)] = block_t[(i, j)];
        }
        b[(i, i)] += jitter_s;
        b[(m + i, m + i)] += jitter_t;
    }

    let pairs = gen_eig_sym(&a, &b, r)?;

    let mut alpha_source = DMatrix::zeros(m, r);
    let mut alpha_target = DMatrix::zeros(m, r);
    let mut correlations = Vec::with_capacity(r);
    for (c, (lambda, v)) in pairs.into_iter().enumerate() {
        let mut a_s = DVector::from_fn(m, |i, _| v[i]);
        let mut a_t = DVector::from_fn(m, |i, _| v[m + i]);
        // unit variance of the training latent G_c · α
        let proj_s = &gs * &a_s;
        let proj_t = &gt * &a_t;
        let var_s = proj_s.norm_squared() / m as f64;
        let var_t = proj_t.norm_squared() / m as f64;
        if var_s <= 0.0 || var_t <= 0.0 {
            return Err(Error::DegenerateView(format!(
                "kernel component {c} has vanishing training variance"
            )));
        }
        a_s /= var_s.sqrt();
        a_t /= var_t.sqrt();
        if let Some(first) = a_s.iter().find(|x| x.abs() > SIGN_EPS) {
            if *first < 0.0 {
                a_s.neg_mut();
                a_t.neg_mut();
            }
        }
        alpha_source.set_column(c, &a_s);
        alpha_target.set_column(c, &a_t);
        correlations.push(lambda.clamp(0.0, 1.0));
    }

    Ok(KccaModel {
        alpha_source,
        alpha_target,
        train_source: p.source_rows.clone(),
        train_target: p.target_rows.clone(),
        kernel,
        kappa,
        correlations,
        gram_col_means_source: col_means_s,
        gram_mean_source: grand_s,
        gram_col_means_target: col_means_t,
        gram_mean_target: grand_t,
    })
}

/// Out-of-sample projection: kernel against the retained training rows,
/// training-set centering correction, then the dual coefficients.
pub fn transform_kernel(m: &KccaModel, rows: &DMatrix<f64>, view: View) -> Result<DMatrix<f64>> {
    let (train, alpha, col_means, grand) = match view {
        View::Source => (
            &m.train_source,
            &m.alpha_source,
            &m.gram_col_means_source,
            m.gram_mean_source,
        ),
        View::Target => (
            &m.train_target,
            &m.alpha_target,
            &m.gram_col_means_target,
            m.gram_mean_target,
        ),
    };
    if rows.ncols() != train.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: rows.ncols(),
        });
    }
    let k = m.kernel.cross_gram(rows, train);
    let n_train = train.nrows() as f64;
    let centered = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        let row_mean = k.row(i).sum() / n_train;
        k[(i, j)] - col_means[j] - row_mean + grand
    });
    Ok(centered * alpha)
}
