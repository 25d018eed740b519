//! Data-driven and exact forward operators on finite-state linear MDPs.
//!
//! Vector-valued functions `g` are row-major `|S||A| x k` tables and policy
//! kernels are row-major `|S| x |A|`.

use super::sampler::{GrammianData, StepData};
use crate::error::{Error, Result};
use crate::instances::LinearMdpSpec;
use crate::linalg::{norm1, project_ball};
use nalgebra::{DMatrix, DVector};

/// `Σ_a π(a|s) g(s,a)` as a row-major `|S| x k` table.
pub fn push_policy(g: &[f64], k: usize, pi: &[f64], num_actions: usize) -> Vec<f64> {
    let s_n = pi.len() / num_actions;
    let mut out = vec![0.0; s_n * k];
    for s in 0..s_n {
        for a in 0..num_actions {
            let w = pi[s * num_actions + a];
            if w == 0.0 {
                continue;
            }
            let row = &g[(s * num_actions + a) * k..(s * num_actions + a + 1) * k];
            for (o, &x) in out[s * k..(s + 1) * k].iter_mut().zip(row) {
                *o += w * x;
            }
        }
    }
    out
}

fn weighted_rows(weights: &[f64], table: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(&table[s * k..(s + 1) * k]) {
            *o += w * x;
        }
    }
    out
}

/// Empirical law of the initial states.
pub fn init_weights(data: &GrammianData) -> Vec<f64> {
    let mut w = vec![0.0; data.num_states];
    let n = data.init_states.len().max(1) as f64;
    for &s in &data.init_states {
        w[s] += 1.0 / n;
    }
    w
}

/// Per-step linear map `ν ↦ (Σ_{t: s_t = s} α_{t,ν})_s`, stored as `|S| x d`.
#[derive(Debug, Clone)]
pub struct StateMap {
    pub matrix: DMatrix<f64>,
}

impl StateMap {
    pub fn new(step: &StepData, dim: usize, num_states: usize) -> Result<Self> {
        let gram = step.gram_matrix(dim);
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric("grammian is not positive definite".into()))?;
        let inv = chol.inverse();
        let mut w = DMatrix::<f64>::zeros(num_states, dim);
        for t in 0..step.len() {
            let s = step.next_states[t];
            for (i, &x) in step.phi(t, dim).iter().enumerate() {
                w[(s, i)] += x;
            }
        }
        Ok(StateMap { matrix: w * inv })
    }

    pub fn weights(&self, nu: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(nu)).iter().copied().collect()
    }
}

/// `α_{t,ν} = φ_tᵀ G⁻¹ ν` for every stored sample of a step.
pub fn alphas(step: &StepData, dim: usize, nu: &[f64]) -> Result<Vec<f64>> {
    let chol = step
        .gram_matrix(dim)
        .cholesky()
        .ok_or_else(|| Error::Numeric("grammian is not positive definite".into()))?;
    let y = chol.solve(&DVector::from_column_slice(nu));
    Ok((0..step.len())
        .map(|t| step.phi(t, dim).iter().zip(y.iter()).map(|(a, b)| a * b).sum())
        .collect())
}

/// `T̂_h(g; ν, π_h)`: the empirical initial-state mean at `h = 0`, the `α`-weighted
/// successor sum of step `h-1` data otherwise (`nu` is ignored at `h = 0`).
pub fn estimate_t_hat(
    g: &[f64],
    k: usize,
    nu: &[f64],
    pi: &[f64],
    num_actions: usize,
    data: &GrammianData,
    h: usize,
) -> Result<Vec<f64>> {
    let pushed = push_policy(g, k, pi, num_actions);
    let weights = if h == 0 {
        init_weights(data)
    } else {
        let step = data
            .steps
            .get(h - 1)
            .ok_or_else(|| Error::Precondition(format!("no sampler data for step {}", h - 1)))?;
        StateMap::new(step, data.dim, data.num_states)?.weights(nu)
    };
    Ok(weighted_rows(&weights, &pushed, k))
}

/// `T_h(g; ν, π_h)` by direct summation: `∫ g dρ π` with `ρ` the initial law at `h = 0`,
/// and `Σ_i ν_i ∫ g dμ_{i,h-1} π` otherwise.
pub fn exact_t(
    g: &[f64],
    k: usize,
    nu: &[f64],
    pi: &[f64],
    spec: &LinearMdpSpec,
    init: &[f64],
    h: usize,
) -> Vec<f64> {
    let pushed = push_policy(g, k, pi, spec.num_actions);
    let weights: Vec<f64> = if h == 0 {
        init.to_vec()
    } else {
        (0..spec.num_states)
            .map(|s| (0..spec.dim).map(|i| nu[i] * spec.mu_row(h - 1, i)[s]).sum())
            .collect()
    };
    weighted_rows(&weights, &pushed, k)
}

/// Forward-greedy `ν` chain and the resulting `F̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Projected `ν̂_j` for `j < h`.
    pub nus: Vec<Vec<f64>>,
    /// Raw operator output at step `h`, before comparison with the target.
    pub endpoint: Vec<f64>,
    /// Accumulated projection slack over `j < h`.
    pub slack: f64,
}

/// Run the greedy chain through steps `0..=h` under per-step kernels `pis`,
/// with `op(j, ν_{j-1}, π_j)` supplying the operator.
pub fn forward_chain<F>(pis: &[&[f64]], h: usize, mut op: F) -> Result<Chain>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<Vec<f64>>,
{
    let mut nus: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut slack = 0.0;
    let mut prev: Vec<f64> = Vec::new();
    for j in 0..=h {
        let raw = op(j, &prev, pis[j])?;
        if j == h {
            return Ok(Chain { nus, endpoint: raw, slack });
        }
        let mut proj = raw.clone();
        project_ball(&mut proj, 1.0);
        slack += norm1(&raw.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
        nus.push(proj.clone());
        prev = proj;
    }
    unreachable!()
}

/// `Ê^ν_h(Π)` by the forward-greedy chain; exact when no projection binds and an
/// upper bound on the infimum otherwise.
pub fn e_hat(
    spec: &LinearMdpSpec,
    pis: &[&[f64]],
    nu: &[f64],
    h: usize,
    data: &GrammianData,
) -> Result<f64> {
    let chain = forward_chain(pis, h, |j, prev, pi| {
        estimate_t_hat(&spec.phi, spec.dim, prev, pi, spec.num_actions, data, j)
    })?;
    let diff: Vec<f64> = chain.endpoint.iter().zip(nu).map(|(a, b)| a - b).collect();
    Ok(chain.slack + norm1(&diff))
}

/// `F̂(Π, ν_0, …, ν_h)` for an explicit chain whose last entry is the target.
pub fn f_hat(spec: &LinearMdpSpec, pis: &[&[f64]], nus: &[Vec<f64>], data: &GrammianData) -> Result<f64> {
    let mut total = 0.0;
    for (j, nu) in nus.iter().enumerate() {
        let prev: &[f64] = if j == 0 { &[] } else { &nus[j - 1] };
        let t = estimate_t_hat(&spec.phi, spec.dim, prev, pis[j], spec.num_actions, data, j)?;
        total += norm1(&t.iter().zip(nu).map(|(a, b)| a - b).collect::<Vec<_>>());
    }
    Ok(total)
}

/// `E^ν_h(Π)` along the greedy chain of the exact operators.
pub fn e_exact(spec: &LinearMdpSpec, init: &[f64], pis: &[&[f64]], nu: &[f64], h: usize) -> Result<f64> {
    let chain = forward_chain(pis, h, |j, prev, pi| Ok(exact_t(&spec.phi, spec.dim, prev, pi, spec, init, j)))?;
    let diff: Vec<f64> = chain.endpoint.iter().zip(nu).map(|(a, b)| a - b).collect();
    Ok(chain.slack + norm1(&diff))
}

/// `f(s,a;x) = |⟨x,ψ⟩|√d − ξ d ⟨x,ψ⟩²`.
#[inline]
pub fn f_eval(psi: &[f64], x: &[f64], xi: f64) -> f64 {
    let d = psi.len() as f64;
    let ip: f64 = psi.iter().zip(x).map(|(a, b)| a * b).sum();
    ip.abs() * d.sqrt() - xi * d * ip * ip
}

/// `f(·; x)` for every pair and every direction, row-major `|S||A| x |X|`.
pub fn f_table(spec: &LinearMdpSpec, directions: &[Vec<f64>], xi: f64) -> Vec<f64> {
    let k = directions.len();
    let mut out = vec![0.0; spec.num_pairs() * k];
    for p in 0..spec.num_pairs() {
        let psi = spec.psi_row(p);
        for (c, x) in directions.iter().enumerate() {
            out[p * k + c] = f_eval(psi, x, xi);
        }
    }
    out
}
