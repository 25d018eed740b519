//! Exact-occupancy checks of the measurement-distribution conditions.

use super::operators::f_eval;
use crate::error::Result;
use crate::instances::LinearMdpSpec;
use crate::linalg::{norm2, sym_eigen};
use crate::mdp::{occupancy, TabularMdp, TabularPolicy};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistPropReport {
    pub h: usize,
    pub max_psi_norm: f64,
    /// `min_x E|⟨ψ,x⟩|` over the direction set.
    pub min_abs_moment: f64,
    /// `min_x E|⟨ψ,x⟩| · √d / ζ`; at least one when the first-moment condition holds.
    pub abs_margin: f64,
    pub lambda_max: f64,
    /// `λ_max(Eψψᵀ) · d ξ²`; at most one when the covariance condition holds.
    pub cov_margin: f64,
    pub passes: bool,
}

/// Law of `ψ(S_h, A_h)` as (weight, pair) with zero weights dropped.
fn psi_law(policy: &TabularPolicy, mdp: &TabularMdp, h: usize) -> Result<Vec<(f64, usize)>> {
    let occ = occupancy(mdp, policy)?;
    Ok(occ.dists[h].iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(p, &w)| (w, p)).collect())
}

pub fn second_moment(law: &[(f64, usize)], spec: &LinearMdpSpec) -> DMatrix<f64> {
    let d = spec.dim;
    let mut m = DMatrix::<f64>::zeros(d, d);
    for &(w, p) in law {
        let psi = spec.psi_row(p);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += w * psi[i] * psi[j];
            }
        }
    }
    m
}

pub fn dist_prop_check(
    policy: &TabularPolicy,
    spec: &LinearMdpSpec,
    mdp: &TabularMdp,
    h: usize,
    zeta: f64,
    xi: f64,
    directions: &[Vec<f64>],
) -> Result<DistPropReport> {
    let law = psi_law(policy, mdp, h)?;
    let d = spec.dim as f64;
    let max_psi_norm = law.iter().map(|&(_, p)| norm2(spec.psi_row(p))).fold(0.0, f64::max);
    let min_abs_moment = directions
        .iter()
        .map(|x| {
            law.iter()
                .map(|&(w, p)| w * spec.psi_row(p).iter().zip(x).map(|(a, b)| a * b).sum::<f64>().abs())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let (vals, _) = sym_eigen(&second_moment(&law, spec));
    let lambda_max = vals.last().copied().unwrap_or(0.0);
    let abs_margin = min_abs_moment * d.sqrt() / zeta;
    let cov_margin = lambda_max * d * xi * xi;
    Ok(DistPropReport {
        h,
        max_psi_norm,
        min_abs_moment,
        abs_margin,
        lambda_max,
        cov_margin,
        passes: max_psi_norm <= 1.0 + 1e-12 && abs_margin >= 1.0 && cov_margin <= 1.0,
    })
}

/// `min_x E f(S_h, A_h; x)` over the direction set under the exact occupancy.
pub fn j_functional(
    policy: &TabularPolicy,
    spec: &LinearMdpSpec,
    mdp: &TabularMdp,
    h: usize,
    xi: f64,
    directions: &[Vec<f64>],
) -> Result<f64> {
    let law = psi_law(policy, mdp, h)?;
    Ok(directions
        .iter()
        .map(|x| law.iter().map(|&(w, p)| w * f_eval(spec.psi_row(p), x, xi)).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}
