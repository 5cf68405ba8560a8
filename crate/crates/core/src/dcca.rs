//! Deep CCA: two sigmoid feed-forward networks trained by full-batch
//! gradient ascent on the total correlation of their outputs, using the
//! analytic SVD-based gradient of the whitened cross-covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::PairedViews;

/// Eigenvalue floor inside the inverse square roots; the output covariance
/// can be numerically singular at sigmoid saturation.
const EIG_FLOOR: f64 = 1e-12;

/// Hidden widths from the reference architecture.
pub const FULL_SCALE_WIDTHS: [usize; 3] = [512, 512, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// in×out weight matrix.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Feed-forward network with logistic sigmoid on every layer, including the
/// output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// Glorot-uniform initialization, ±sqrt(6/(fan_in+fan_out)) per layer.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(fan_in, fan_out, |_, _| {
                        rng.gen_range(-bound..bound)
                    }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    /// Forward pass keeping every layer's activation for the backward pass.
    /// `activations[0]` is the input batch.
    fn forward_cached(&self, batch: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let pre = acts.last().unwrap() * &layer.weight;
            let post = DMatrix::from_fn(pre.nrows(), pre.ncols(), |i, j| {
                sigmoid(pre[(i, j)] + layer.bias[j])
            });
            acts.push(post);
        }
        acts
    }
}

/// M×in batch through all layers, affine then sigmoid each.
pub fn mlp_forward(net: &Mlp, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if batch.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: batch.ncols(),
        });
    }
    Ok(net.forward_cached(batch).pop().unwrap())
}

/// Exact reverse-mode gradients of Σᵢⱼ upstream[i,j]·output[i,j] with respect
/// to every weight and bias, as (dW, db) per layer.
pub fn mlp_backward(
    net: &Mlp,
    batch: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    if batch.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: batch.ncols(),
        });
    }
    if upstream.ncols() != net.output_dim() || upstream.nrows() != batch.nrows() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            got: upstream.ncols(),
        });
    }
    let acts = net.forward_cached(batch);
    let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); net.layers.len()];
    let mut delta = upstream.clone();
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let post = &acts[l + 1];
        // sigmoid' = a(1−a)
        let delta_pre = DMatrix::from_fn(delta.nrows(), delta.ncols(), |i, j| {
            delta[(i, j)] * post[(i, j)] * (1.0 - post[(i, j)])
        });
        let dw = acts[l].transpose() * &delta_pre;
        let db = DVector::from_fn(delta_pre.ncols(), |j, _| delta_pre.column(j).sum());
        delta = &delta_pre * layer.weight.transpose();
        grads[l] = (dw, db);
    }
    Ok(grads)
}

fn center_rows(h: &DMatrix<f64>) -> DMatrix<f64> {
    let m = h.ncols() as f64;
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] - h.row(i).sum() / m)
}

/// U diag(ev^(−1/2)) Uᵀ with eigenvalues floored at `EIG_FLOOR`.
fn inv_sqrt_sym(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new((sigma + sigma.transpose()) * 0.5);
    let scaled = DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].max(EIG_FLOOR).sqrt()
    });
    &scaled * eig.eigenvectors.transpose()
}

struct CorrParts {
    hs_bar: DMatrix<f64>,
    ht_bar: DMatrix<f64>,
    inv_sqrt_s: DMatrix<f64>,
    inv_sqrt_t: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn corr_parts(hs: &DMatrix<f64>, ht: &DMatrix<f64>, lambda: f64) -> Result<CorrParts> {
    if hs.nrows() != ht.nrows() || hs.ncols() != ht.ncols() {
        return Err(Error::DimensionMismatch {
            expected: hs.ncols(),
            got: ht.ncols(),
        });
    }
    let m = hs.ncols();
    if m < 2 {
        return Err(Error::TooFewRows { need: 2, got: m });
    }
    if hs.iter().chain(ht.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dcca inputs".to_string()));
    }
    let mf = m as f64;
    let r = hs.nrows();
    let hs_bar = center_rows(hs);
    let ht_bar = center_rows(ht);
    let sigma_s = &hs_bar * hs_bar.transpose() / mf + DMatrix::identity(r, r) * lambda;
    let sigma_t = &ht_bar * ht_bar.transpose() / mf + DMatrix::identity(r, r) * lambda;
    let sigma_st = &hs_bar * ht_bar.transpose() / mf;
    let inv_sqrt_s = inv_sqrt_sym(&sigma_s);
    let inv_sqrt_t = inv_sqrt_sym(&sigma_t);
    let t = &inv_sqrt_s * sigma_st * &inv_sqrt_t;
    let svd = nalgebra::SVD::new(t, true, true);
    Ok(CorrParts {
        hs_bar,
        ht_bar,
        inv_sqrt_s,
        inv_sqrt_t,
        svd,
    })
}

/// Total correlation: the sum of all singular values of
/// Σ̂_S^(−1/2) Σ̂_ST Σ̂_T^(−1/2) on column-centered r×M representations.
pub fn dcca_objective(hs: &DMatrix<f64>, ht: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let parts = corr_parts(hs, ht, lambda)?;
    Ok(parts.svd.singular_values.iter().sum())
}

/// Analytic gradients of the total correlation with respect to both
/// representations, from the SVD U D Vᵀ of the whitened cross-covariance.
pub fn dcca_gradient(
    hs: &DMatrix<f64>,
    ht: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let parts = corr_parts(hs, ht, lambda)?;
    let m = hs.ncols() as f64;
    let u = parts.svd.u.as_ref().unwrap();
    let vt = parts.svd.v_t.as_ref().unwrap();
    let d = DMatrix::from_diagonal(&parts.svd.singular_values);

    let nabla_st = &parts.inv_sqrt_s * u * vt * &parts.inv_sqrt_t;
    let nabla_s = -0.5 * &parts.inv_sqrt_s * u * &d * u.transpose() * &parts.inv_sqrt_s;
    let grad_s = (2.0 * nabla_s * &parts.hs_bar + &nabla_st * &parts.ht_bar) / m;

    let nabla_ts = &parts.inv_sqrt_t * vt.transpose() * u.transpose() * &parts.inv_sqrt_s;
    let nabla_t = -0.5 * &parts.inv_sqrt_t * vt.transpose() * &d * vt * &parts.inv_sqrt_t;
    let grad_t = (2.0 * nabla_t * &parts.ht_bar + &nabla_ts * &parts.hs_bar) / m;

    Ok((grad_s, grad_t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccaTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Hidden widths; `FULL_SCALE_WIDTHS` for the reference architecture,
    /// smaller for desk-scale runs.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for DccaTrainConfig {
    fn default() -> Self {
        DccaTrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            lambda_reg: 1e-3,
            seed: 0,
            hidden_widths: vec![16, 16, 16],
            latent_dim: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccaModel {
    pub net_source: Mlp,
    pub net_target: Mlp,
    pub lambda_reg: f64,
    pub r: usize,
    /// Objective before training plus after every epoch; length epochs+1.
    pub trace: Vec<f64>,
}

impl DccaModel {
    pub fn transform(&self, rows: &DMatrix<f64>, view: crate::cca::View) -> Result<DMatrix<f64>> {
        match view {
            crate::cca::View::Source => mlp_forward(&self.net_source, rows),
            crate::cca::View::Target => mlp_forward(&self.net_target, rows),
        }
    }
}

/// Full-batch gradient ascent on the total correlation, deterministic per
/// seed. Errors out with the epoch index if the objective goes non-finite.
pub fn train_dcca(p: &PairedViews, cfg: &DccaTrainConfig) -> Result<DccaModel> {
    let m = p.source_rows.nrows();
    let r = cfg.latent_dim;
    if cfg.epochs == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(
            "epochs must be >= 1 and learning_rate > 0".to_string(),
        ));
    }
    if m < r + 1 {
        return Err(Error::TooFewRows { need: r + 1, got: m });
    }
    let input_dim = p.source_rows.ncols();
    let mut widths = vec![input_dim];
    widths.extend_from_slice(&cfg.hidden_widths);
    widths.push(r);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net_source = Mlp::init(&widths, &mut rng);
    let mut net_target = Mlp::init(&widths, &mut rng);

    let objective = |ns: &Mlp, nt: &Mlp| -> Result<f64> {
        let hs = mlp_forward(ns, &p.source_rows)?.transpose();
        let ht = mlp_forward(nt, &p.target_rows)?.transpose();
        dcca_objective(&hs, &ht, cfg.lambda_reg)
    };

    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    trace.push(objective(&net_source, &net_target)?);
    for epoch in 0..cfg.epochs {
        let hs = mlp_forward(&net_source, &p.source_rows)?.transpose();
        let ht = mlp_forward(&net_target, &p.target_rows)?.transpose();
        let (grad_hs, grad_ht) = dcca_gradient(&hs, &ht, cfg.lambda_reg)?;
        let up_s = grad_hs.transpose();
        let up_t = grad_ht.transpose();
        let gs = mlp_backward(&net_source, &p.source_rows, &up_s)?;
        let gt = mlp_backward(&net_target, &p.target_rows, &up_t)?;
        for (layer, (dw, db)) in net_source.layers.iter_mut().zip(gs) {
            layer.weight += dw * cfg.learning_rate;
            layer.bias += db * cfg.learning_rate;
        }
        for (layer, (dw, db)) in net_target.layers.iter_mut().zip(gt) {
            layer.weight += dw * cfg.learning_rate;
            layer.bias += db * cfg.learning_rate;
        }
        let obj = objective(&net_source, &net_target)?;
        if !obj.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        trace.push(obj);
    }

    Ok(DccaModel {
        net_source,
        net_target,
        lambda_reg: cfg.lambda_reg,
        r,
        trace,
    })
}
