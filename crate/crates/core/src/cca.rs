//! Regularized linear canonical correlation analysis.
//!
//! Fitting solves the symmetric-definite block eigenproblem
//!
//! ```text
//! [ 0      Σ_ST ] [w_S]       [ Σ_S+ρI   0    ] [w_S]
//! [ Σ_TS   0    ] [w_T]  = λ  [ 0      Σ_T+ρI ] [w_T]
//! ```
//!
//! whose positive eigenvalues are the canonical correlations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::PairedViews;

/// Coefficients below this magnitude are ignored when picking the sign
/// reference entry.
const SIGN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    /// p×r projection, columns ordered by non-increasing correlation and
    /// scaled so wᵀ(Σ+ρI)w = 1 per component.
    pub w_source: DMatrix<f64>,
    pub w_target: DMatrix<f64>,
    pub mu_source: DVector<f64>,
    pub mu_target: DVector<f64>,
    /// Non-increasing, clipped to [0,1].
    pub correlations: Vec<f64>,
    pub rho: f64,
    pub r: usize,
}

/// Top-r solutions of A v = λ B v for symmetric A and positive-definite B,
/// returned with vᵀBv = 1 and eigenvalues non-increasing. Both inputs are
/// symmetrized as (X+Xᵀ)/2 before solving.
pub fn gen_eig_sym(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: usize,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let p = a.nrows();
    if r > p {
        return Err(Error::RankTooLarge {
            requested: r,
            available: p,
        });
    }
    let a = (a + a.transpose()) * 0.5;
    let b = (b + b.transpose()) * 0.5;

    let chol = match nalgebra::Cholesky::new(b.clone()) {
        Some(c) => c,
        None => {
            let eig = nalgebra::SymmetricEigen::new(b);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(Error::NotPositiveDefinite(min));
        }
    };
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ, symmetric with the same eigenvalues
    let y = l
        .solve_lower_triangular(&a)
        .ok_or(Error::NotPositiveDefinite(0.0))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::NotPositiveDefinite(0.0))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let lt = l.transpose();
    let mut out = Vec::with_capacity(r);
    for &idx in order.iter().take(r) {
        let u = eig.eigenvectors.column(idx).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or(Error::NotPositiveDefinite(0.0))?;
        out.push((eig.eigenvalues[idx], v));
    }
    Ok(out)
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let m = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / m)
}

fn centered(x: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mu[j])
}

/// Fixes the sign ambiguity: the first source coefficient with magnitude
/// above `SIGN_EPS` is made positive, flipping both views together.
fn apply_sign_convention(ws: &mut DVector<f64>, wt: &mut DVector<f64>) {
    if let Some(first) = ws.iter().find(|v| v.abs() > SIGN_EPS) {
        if *first < 0.0 {
            ws.neg_mut();
            wt.neg_mut();
        }
    }
}

pub fn fit_linear_cca(p: &PairedViews, r: usize, rho: f64) -> Result<CcaModel> {
    let m = p.source_rows.nrows();
    if m < 2 {
        return Err(Error::TooFewRows { need: 2, got: m });
    }
    let dim = p.source_rows.ncols();
    if r == 0 || r > dim {
        return Err(Error::RankTooLarge {
            requested: r,
            available: dim,
        });
    }

    let mu_s = column_means(&p.source_rows);
    let mu_t = column_means(&p.target_rows);
    let xs = centered(&p.source_rows, &mu_s);
    let xt = centered(&p.target_rows, &mu_t);

    let mf = m as f64;
    let sigma_s = xs.transpose() * &xs / mf;
    let sigma_t = xt.transpose() * &xt / mf;
    let sigma_st = xs.transpose() * &xt / mf;

    for (name, sigma) in [("source", &sigma_s), ("target", &sigma_t)] {
        if sigma.iter().all(|v| v.abs() < 1e-300) {
            return Err(Error::DegenerateView(format!("all-constant {name} view")));
        }
    }

    let two = 2 * dim;
    let mut a = DMatrix::zeros(two, two);
    let mut b = DMatrix::zeros(two, two);
    for i in 0..dim {
        for j in 0..dim {
            a[(i, dim + j)] = sigma_st[(i, j)];
            a[(dim + j, i)] = sigma_st[(i, j)];
            b[(i, j)] = sigma_s[(i, j)];
            b[(dim + i, dim + j)] = sigma_t[(i, j)];
        }
        b[(i, i)] += rho;
        b[(dim + i, dim + i)] += rho;
    }

    let pairs = gen_eig_sym(&a, &b, r)?;

    let mut w_source = DMatrix::zeros(dim, r);
    let mut w_target = DMatrix::zeros(dim, r);
    let mut correlations = Vec::with_capacity(r);
    let reg_s = &sigma_s + DMatrix::identity(dim, dim) * rho;
    let reg_t = &sigma_t + DMatrix::identity(dim, dim) * rho;
    for (c, (lambda, v)) in pairs.into_iter().enumerate() {
        let mut ws = DVector::from_fn(dim, |i, _| v[i]);
        let mut wt = DVector::from_fn(dim, |i, _| v[dim + i]);
        let ns = (ws.transpose() * &reg_s * &ws)[(0, 0)];
        let nt = (wt.transpose() * &reg_t * &wt)[(0, 0)];
        if ns <= 0.0 || nt <= 0.0 {
            return Err(Error::DegenerateView(format!(
                "component {c} has vanishing within-view variance"
            )));
        }
        ws /= ns.sqrt();
        wt /= nt.sqrt();
        apply_sign_convention(&mut ws, &mut wt);
        w_source.set_column(c, &ws);
        w_target.set_column(c, &wt);
        correlations.push(lambda.clamp(0.0, 1.0));
    }

    Ok(CcaModel {
        w_source,
        w_target,
        mu_source: mu_s,
        mu_target: mu_t,
        correlations,
        rho,
        r,
    })
}

/// Projects rows of one view into the shared latent space: (rows − μ)·w.
pub fn transform_linear(m: &CcaModel, rows: &DMatrix<f64>, view: View) -> Result<DMatrix<f64>> {
    let (w, mu) = match view {
        View::Source => (&m.w_source, &m.mu_source),
        View::Target => (&m.w_target, &m.mu_target),
    };
    if rows.ncols() != w.nrows() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows(),
            got: rows.ncols(),
        });
    }
    Ok(centered(rows, mu) * w)
}

/// Default latent dimension: half the smaller numerical rank, at least 1.
pub fn default_latent_dim(rank_source: usize, rank_target: usize) -> usize {
    (rank_source.min(rank_target) / 2).max(1)
}
