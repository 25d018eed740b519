//! Sup-inf search over the policy net for measurement-friendly policies.

use super::operators::{f_table, init_weights, push_policy, StateMap};
use super::policy::{PolicyNet, SoftmaxPolicy};
use super::sampler::GrammianData;
use crate::error::{Error, Result};
use crate::instances::LinearMdpSpec;
use crate::linalg::{norm1, project_ball};
use crate::lowdisc::{direction_set, sphere_points};
use crate::report::fmt_float;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub xi: f64,
    pub eta0: f64,
    /// Low-discrepancy directions added to the `±e_i` axes.
    pub x_directions: usize,
    /// Largest number of prefix combinations enumerated before falling back to
    /// repeating one member across the prefix.
    pub prefix_budget: usize,
    /// Extra `ν` candidates per chain endpoint, spread on a small sphere around it.
    pub nu_net: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            xi: 0.1,
            eta0: 0.1,
            x_directions: 512,
            prefix_budget: 4096,
            nu_net: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub h: usize,
    pub policy: SoftmaxPolicy,
    /// Net member used at each step.
    pub choice: Vec<usize>,
    pub nu_hat: Option<Vec<f64>>,
    pub certified_value: f64,
    pub constraint_value: f64,
    pub net_size: usize,
    pub x_directions: usize,
    pub nu_candidates: usize,
    pub feasible_candidates: usize,
}

struct Candidate {
    prefix: Vec<usize>,
    nu: Vec<f64>,
    constraint: f64,
}

fn min_over_columns(weights: &[f64], table: &[f64], k: usize) -> f64 {
    let mut acc = vec![0.0; k];
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &x) in acc.iter_mut().zip(&table[s * k..(s + 1) * k]) {
            *o += w * x;
        }
    }
    acc.into_iter().fold(f64::INFINITY, f64::min)
}

fn prefixes(net_size: usize, h: usize, budget: usize) -> Vec<Vec<usize>> {
    let total = (net_size as f64).powi(h as i32);
    if total > budget as f64 {
        return (0..net_size).map(|c| vec![c; h]).collect();
    }
    let mut out = vec![vec![]];
    for _ in 0..h {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..net_size).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// Find `Π̂^{f,h}`: at `h = 0` maximize `inf_x T̂_0(f(·;x), π_0)`; later maximize
/// `inf_x T̂_h(f(·;x); ν, π_h)` over chain-endpoint `ν` candidates whose greedy
/// `Ê` stays within `η₀`.
pub fn policy_search_fh(
    h: usize,
    spec: &LinearMdpSpec,
    data: &GrammianData,
    net: &PolicyNet,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    if net.is_empty() {
        return Err(Error::Config("empty policy net".into()));
    }
    if h > data.steps.len() {
        return Err(Error::Precondition(format!("no sampler data reaching step {h}")));
    }
    let (d, a_n, s_n) = (spec.dim, spec.num_actions, spec.num_states);
    let dirs = direction_set(d, cfg.x_directions);
    let k = dirs.len();
    let ftab = f_table(spec, &dirs, cfg.xi);
    let pushed_f: Vec<Vec<f64>> = net.kernels.par_iter().map(|kern| push_policy(&ftab, k, kern, a_n)).collect();
    let finish = |choice_h: usize, prefix: Vec<usize>, nu_hat: Option<Vec<f64>>, value: f64, constraint: f64, cands: usize, feas: usize| {
        let mut choice = prefix;
        choice.push(choice_h);
        choice.resize(spec.horizon, 0);
        SearchResult {
            h,
            policy: net.policy(&choice),
            choice,
            nu_hat,
            certified_value: value,
            constraint_value: constraint,
            net_size: net.len(),
            x_directions: k,
            nu_candidates: cands,
            feasible_candidates: feas,
        }
    };
    if h == 0 {
        let w0 = init_weights(data);
        let (best, value) = pushed_f
            .iter()
            .enumerate()
            .map(|(c, t)| (c, min_over_columns(&w0, t, k)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        return Ok(finish(best, vec![], None, value, 0.0, 1, 1));
    }

    let maps: Vec<StateMap> = data.steps[..h]
        .iter()
        .map(|st| StateMap::new(st, d, s_n))
        .collect::<Result<_>>()?;
    let pushed_phi: Vec<Vec<f64>> = net.kernels.iter().map(|kern| push_policy(&spec.phi, d, kern, a_n)).collect();
    let w0 = init_weights(data);
    let apply = |weights: &[f64], c: usize| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (s, &w) in weights.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(&pushed_phi[c][s * d..(s + 1) * d]) {
                *o += w * x;
            }
        }
        out
    };
    let perturb = if cfg.nu_net > 0 && d > 1 { sphere_points(cfg.nu_net, d) } else { vec![] };
    let nu_radius = cfg.eta0 / (2.0 * (d as f64).sqrt());
    let candidates: Vec<Candidate> = prefixes(net.len(), h, cfg.prefix_budget)
        .into_par_iter()
        .flat_map_iter(|prefix| {
            let mut slack = 0.0;
            let mut nu: Vec<f64> = Vec::new();
            for (j, &c) in prefix.iter().enumerate() {
                let raw = if j == 0 { apply(&w0, c) } else { apply(&maps[j - 1].weights(&nu), c) };
                let mut proj = raw.clone();
                project_ball(&mut proj, 1.0);
                slack += norm1(&raw.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
                nu = proj;
            }
            let mut out = vec![Candidate {
                prefix: prefix.clone(),
                nu: nu.clone(),
                constraint: slack,
            }];
            for dir in &perturb {
                let mut q: Vec<f64> = nu.iter().zip(dir).map(|(a, b)| a + nu_radius * b).collect();
                project_ball(&mut q, 1.0);
                let extra = norm1(&q.iter().zip(&nu).map(|(a, b)| a - b).collect::<Vec<_>>());
                out.push(Candidate {
                    prefix: prefix.clone(),
                    nu: q,
                    constraint: slack + extra,
                });
            }
            out
        })
        .collect();
    let feasible: Vec<&Candidate> = candidates.iter().filter(|c| c.constraint <= cfg.eta0).collect();
    if feasible.is_empty() {
        let best = candidates.iter().map(|c| c.constraint).fold(f64::INFINITY, f64::min);
        return Err(Error::Infeasible(format!(
            "no net policy reaches step {h} with estimated chain error <= {} (best {best:.4e})",
            cfg.eta0
        )));
    }
    let last = &maps[h - 1].matrix;
    let b: Vec<DMatrix<f64>> = pushed_f
        .par_iter()
        .map(|t| last.transpose() * DMatrix::from_row_slice(s_n, k, t))
        .collect();
    let scored: Vec<(usize, usize, f64)> = feasible
        .par_iter()
        .enumerate()
        .map(|(i, cand)| {
            let mut best = (i, 0, f64::NEG_INFINITY);
            for (c, bc) in b.iter().enumerate() {
                let mut m = f64::INFINITY;
                for x in 0..k {
                    let v: f64 = (0..d).map(|r| cand.nu[r] * bc[(r, x)]).sum();
                    m = m.min(v);
                }
                if m > best.2 {
                    best = (i, c, m);
                }
            }
            best
        })
        .collect();
    let (i, c, value) = scored
        .into_iter()
        .fold((0, 0, f64::NEG_INFINITY), |acc, x| if x.2 > acc.2 { x } else { acc });
    let win = feasible[i];
    Ok(finish(
        c,
        win.prefix.clone(),
        Some(win.nu.clone()),
        value,
        win.constraint,
        candidates.len(),
        feasible.len(),
    ))
}

/// Search results as CSV with a `ζ/2` target column.
pub fn search_csv(results: &[SearchResult], zeta: f64) -> String {
    let mut s = String::from("h,certified_value,zeta_over_2_target,constraint_value,net_size,x_directions\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.h,
            fmt_float(r.certified_value),
            fmt_float(zeta / 2.0),
            fmt_float(r.constraint_value),
            r.net_size,
            r.x_directions
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_enumeration_falls_back_to_diagonal() {
        assert_eq!(prefixes(3, 2, 100).len(), 9);
        assert_eq!(prefixes(3, 2, 5), vec![vec![0, 0], vec![1, 1], vec![2, 2]]);
        assert_eq!(prefixes(4, 0, 10), vec![Vec::<usize>::new()]);
    }
}
