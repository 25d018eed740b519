use crate::error::{Error, Result};
use crate::linalg::svd;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Incoherence diagnostics of a rank-`r` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// `max(μ(col space), μ(row space))`.
    pub mu0: f64,
    /// `max_ij |U Vᵀ|_ij · sqrt(n1 n2 / r)`.
    pub mu1: f64,
    pub mu_col: f64,
    pub mu_row: f64,
    pub rank: usize,
}

/// `n/r · max_i ‖P_U e_i‖²` for an orthonormal `n x r` basis `U`.
pub fn subspace_coherence(u: &DMatrix<f64>) -> f64 {
    let (n, r) = u.shape();
    if r == 0 {
        return 0.0;
    }
    let max_row = (0..n)
        .map(|i| u.row(i).iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    n as f64 / r as f64 * max_row
}

pub fn coherence(m: &DMatrix<f64>, r: usize) -> Result<CoherenceReport> {
    if m.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("coherence of the zero matrix is undefined".into()));
    }
    if r == 0 || r > m.nrows().min(m.ncols()) {
        return Err(Error::Precondition(format!("rank {r} out of range for a {:?} matrix", m.shape())));
    }
    let d = svd(m);
    let eff = d.rank(1e-10);
    if eff > r {
        return Err(Error::Precondition(format!("effective rank {eff} exceeds requested rank {r}")));
    }
    let u = d.u.columns(0, r).into_owned();
    let v = d.v.columns(0, r).into_owned();
    let mu_col = subspace_coherence(&u);
    let mu_row = subspace_coherence(&v);
    let uv = &u * v.transpose();
    let (n1, n2) = m.shape();
    let mu1 = uv.amax() * ((n1 * n2) as f64 / r as f64).sqrt();
    Ok(CoherenceReport {
        mu0: mu_col.max(mu_row),
        mu1,
        mu_col,
        mu_row,
        rank: r,
    })
}
