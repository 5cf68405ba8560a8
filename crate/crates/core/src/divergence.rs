//! Domain-divergence metrics: maximum mean discrepancy, proxy A-distance,
//! and CORAL loss, measurable before and after latent projection.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

const PROXY_A_REPEATS: u64 = 5;
const PROXY_A_EPOCHS: usize = 200;
const PROXY_A_LR: f64 = 0.5;
const PROXY_A_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreCca,
    PostCca,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::PreCca => "pre_cca",
            Stage::PostCca => "post_cca",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub mmd: f64,
    pub proxy_a: f64,
    pub coral: f64,
    pub stage: Stage,
    pub kernel: KernelSpec,
}

impl DivergenceReport {
    /// One CSV data row; pair with the header
    /// `transfer_id,baseline,stage,mmd,proxy_a,coral`.
    pub fn csv_row(&self, transfer_id: &str, baseline: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            transfer_id, baseline, self.stage, self.mmd, self.proxy_a, self.coral
        )
    }
}

/// Biased V-statistic estimate of the RKHS distance between mean embeddings:
/// sqrt of (1/n²)ΣΣk(x,x′) − (2/nm)ΣΣk(x,y) + (1/m²)ΣΣk(y,y′), floored at 0.
pub fn mmd(x: &DMatrix<f64>, y: &DMatrix<f64>, kernel: &KernelSpec) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::TooFewRows { need: 1, got: 0 });
    }
    let mean_gram = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        kernel.cross_gram(a, b).sum() / (a.nrows() * b.nrows()) as f64
    };
    let v = mean_gram(x, x) - 2.0 * mean_gram(x, y) + mean_gram(y, y);
    Ok(v.max(0.0).sqrt())
}

/// Sample covariance with mean removal written via the ones-vector product:
/// C = (1/(n−1))(DᵀD − (1/n)(1ᵀD)ᵀ(1ᵀD)).
fn coral_covariance(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows() as f64;
    let col_sums = RowDVector::from_fn(d.ncols(), |_, j| d.column(j).sum());
    (d.transpose() * d - col_sums.transpose() * &col_sums / n) / (n - 1.0)
}

/// Correlation-alignment loss (1/4d²)‖C_S − C_T‖²_F between the two sample
/// covariance matrices.
pub fn coral_loss(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::TooFewRows {
            need: 2,
            got: x.nrows().min(y.nrows()),
        });
    }
    let d = x.ncols() as f64;
    let diff = coral_covariance(x) - coral_covariance(y);
    Ok(diff.norm_squared() / (4.0 * d * d))
}

/// Logistic ridge classifier trained by full-batch gradient descent; returns
/// the held-out misclassification rate.
fn domain_classifier_error(
    train: &DMatrix<f64>,
    train_labels: &[f64],
    test: &DMatrix<f64>,
    test_labels: &[f64],
) -> f64 {
    let n = train.nrows() as f64;
    let d = train.ncols();
    let mut w = DVector::<f64>::zeros(d);
    let mut b = 0.0;
    for _ in 0..PROXY_A_EPOCHS {
        let scores = train * &w;
        let mut grad_w = &w * PROXY_A_RIDGE;
        let mut grad_b = 0.0;
        for i in 0..train.nrows() {
            let p = 1.0 / (1.0 + (-(scores[i] + b)).exp());
            let residual = (p - train_labels[i]) / n;
            grad_w += train.row(i).transpose() * residual;
            grad_b += residual;
        }
        w -= grad_w * PROXY_A_LR;
        b -= grad_b * PROXY_A_LR;
    }
    let mut wrong = 0usize;
    for (i, &label) in test_labels.iter().enumerate() {
        let score = test.row(i).transpose().dot(&w) + b;
        let predicted = if score > 0.0 { 1.0 } else { 0.0 };
        if predicted != label {
            wrong += 1;
        }
    }
    wrong as f64 / test.nrows() as f64
}

/// Proxy A-distance 2(1 − 2·err): trains a linear classifier to tell the two
/// samples apart on a 50/50 stratified split, clips at 0, and averages over
/// five seeded repeats.
pub fn proxy_a_distance(x: &DMatrix<f64>, y: &DMatrix<f64>, seed: u64) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    let m = x.nrows().min(y.nrows());
    if m < 4 {
        return Err(Error::TooFewRows {
            need: 4,
            got: m,
        });
    }
    let d = x.ncols();
    let half = m / 2;
    let mut total = 0.0;
    for rep in 0..PROXY_A_REPEATS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep));
        // subsample each set to m rows, then split each half-and-half so both
        // train and test stay 50/50 across domains
        let mut pick = |rows: usize| -> Vec<usize> {
            let mut ids: Vec<usize> = (0..rows).collect();
            ids.shuffle(&mut rng);
            ids.truncate(m);
            ids
        };
        let xs = pick(x.nrows());
        let ys = pick(y.nrows());
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (ids, src, label) in [(&xs, x, 0.0), (&ys, y, 1.0)] {
            for (pos, &id) in ids.iter().enumerate() {
                let row: Vec<f64> = (0..d).map(|j| src[(id, j)]).collect();
                if pos < half {
                    train.push((row, label));
                } else {
                    test.push((row, label));
                }
            }
        }
        let to_matrix = |rows: &[(Vec<f64>, f64)]| {
            DMatrix::from_fn(rows.len(), d, |i, j| rows[i].0[j])
        };
        let train_m = to_matrix(&train);
        let test_m = to_matrix(&test);
        let train_l: Vec<f64> = train.iter().map(|r| r.1).collect();
        let test_l: Vec<f64> = test.iter().map(|r| r.1).collect();
        let err = domain_classifier_error(&train_m, &train_l, &test_m, &test_l);
        total += (2.0 * (1.0 - 2.0 * err)).max(0.0);
    }
    Ok(total / PROXY_A_REPEATS as f64)
}

/// All three metrics for one dataset pair at one stage; deterministic per seed.
pub fn divergence_report(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    stage: Stage,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<DivergenceReport> {
    Ok(DivergenceReport {
        mmd: mmd(x, y, kernel)?,
        proxy_a: proxy_a_distance(x, y, seed)?,
        coral: coral_loss(x, y)?,
        stage,
        kernel: *kernel,
    })
}
