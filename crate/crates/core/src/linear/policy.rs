//! Softmax policies over the embeddings and finite nets of them.

use crate::error::{Error, Result};
use crate::instances::LinearMdpSpec;
use crate::linalg::{dot, norm2};
use crate::lowdisc::{ball_pair_points, MAX_PAIR_DIM};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::rng::{self, tag};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `π_h(a|s) ∝ exp(⟨ψ(s,a), u_h⟩ + ⟨φ(s,a), v_h⟩)` with `u_h, v_h` in the ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub radius: f64,
    /// Per step `(u_h, v_h)`.
    pub params: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SoftmaxPolicy {
    pub fn new(radius: f64, params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let tol = radius * (1.0 + 1e-12) + 1e-15;
        for (h, (u, v)) in params.iter().enumerate() {
            if norm2(u) > tol || norm2(v) > tol {
                return Err(Error::Contract(format!("policy parameters at step {h} leave the radius-{radius} ball")));
            }
        }
        Ok(SoftmaxPolicy { radius, params })
    }

    /// All-zero parameters, i.e. the uniform policy.
    pub fn uniform(horizon: usize, dim: usize, radius: f64) -> Self {
        SoftmaxPolicy {
            radius,
            params: vec![(vec![0.0; dim], vec![0.0; dim]); horizon],
        }
    }

    pub fn kernel(&self, spec: &LinearMdpSpec, h: usize) -> Vec<f64> {
        let (u, v) = &self.params[h];
        softmax_kernel(spec, u, v)
    }

    pub fn to_tabular(&self, spec: &LinearMdpSpec, mdp: &TabularMdp) -> Result<TabularPolicy> {
        let kernels = (0..self.params.len()).map(|h| self.kernel(spec, h)).collect();
        TabularPolicy::new(mdp, kernels)
    }
}

/// Row-major `|S| x |A|` action distributions for one parameter pair.
pub fn softmax_kernel(spec: &LinearMdpSpec, u: &[f64], v: &[f64]) -> Vec<f64> {
    let a_n = spec.num_actions;
    let mut out = vec![0.0; spec.num_pairs()];
    for s in 0..spec.num_states {
        let row = &mut out[s * a_n..(s + 1) * a_n];
        for (a, x) in row.iter_mut().enumerate() {
            let p = s * a_n + a;
            *x = dot(spec.psi_row(p), u) + dot(spec.phi_row(p), v);
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// Total variation between two kernels, maximized over states.
pub fn tv_distance(p: &[f64], q: &[f64], num_actions: usize) -> f64 {
    p.chunks(num_actions)
        .zip(q.chunks(num_actions))
        .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `½(exp(2‖Δu‖₂ + 2‖Δv‖∞) − 1)`.
pub fn tv_bound(du: &[f64], dv: &[f64]) -> f64 {
    let dv_inf = dv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    0.5 * ((2.0 * norm2(du) + 2.0 * dv_inf).exp() - 1.0)
}

fn pair_distance(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    let du: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect();
    let dv: Vec<f64> = a.1.iter().zip(&b.1).map(|(x, y)| x - y).collect();
    tv_bound(&du, &dv)
}

/// Finite set of per-step parameter pairs; a net policy picks one member per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub eta: f64,
    pub radius: f64,
    pub horizon: usize,
    pub members: Vec<(Vec<f64>, Vec<f64>)>,
    /// Per member, its `|S| x |A|` kernel.
    pub kernels: Vec<Vec<f64>>,
    /// Largest TV bound from a probe point to its nearest member.
    pub covering_radius: f64,
    /// Whether the measured covering radius reaches `η`.
    pub covered: bool,
    /// `log |net|` over all steps.
    pub log_cardinality: f64,
    /// `log |net| / log(1/η)`, absent when `η ≥ 1`.
    pub measured_dim: Option<f64>,
}

impl PolicyNet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Net policy choosing `choice[h]` at step `h`.
    pub fn policy(&self, choice: &[usize]) -> SoftmaxPolicy {
        SoftmaxPolicy {
            radius: self.radius,
            params: choice.iter().map(|&c| self.members[c].clone()).collect(),
        }
    }
}

const COVER_PROBES: usize = 256;

/// Net over `B(R) x B(R)` per step built from low-discrepancy points, capped at `budget`
/// members per step. A resolution of one or more needs only the uniform policy.
pub fn build_policy_net(spec: &LinearMdpSpec, eta: f64, radius: f64, budget: usize) -> Result<PolicyNet> {
    if !(eta > 0.0) || !(radius >= 0.0) || budget == 0 {
        return Err(Error::Config("net needs eta > 0, radius >= 0 and a positive budget".into()));
    }
    let d = spec.dim;
    let members = if eta >= 1.0 || radius == 0.0 {
        vec![(vec![0.0; d], vec![0.0; d])]
    } else {
        if d > MAX_PAIR_DIM {
            return Err(Error::Config(format!("policy net supports d <= {MAX_PAIR_DIM}")));
        }
        ball_pair_points(budget, d, radius)
    };
    let mut rng = rng::stream(0, &[tag("linear"), tag("net-probe")]);
    let mut covering_radius: f64 = 0.0;
    for _ in 0..COVER_PROBES {
        let probe = (random_in_ball(d, radius, &mut rng), random_in_ball(d, radius, &mut rng));
        let nearest = members.iter().map(|m| pair_distance(&probe, m)).fold(f64::INFINITY, f64::min);
        covering_radius = covering_radius.max(nearest.min(1.0));
    }
    let kernels = members.iter().map(|(u, v)| softmax_kernel(spec, u, v)).collect();
    let log_cardinality = spec.horizon as f64 * (members.len() as f64).ln();
    Ok(PolicyNet {
        eta,
        radius,
        horizon: spec.horizon,
        covered: covering_radius <= eta,
        measured_dim: (eta < 1.0).then(|| log_cardinality / (1.0 / eta).ln()),
        log_cardinality,
        covering_radius,
        kernels,
        members,
    })
}

fn random_in_ball(d: usize, radius: f64, rng: &mut rng::Stream) -> Vec<f64> {
    if d == 0 || radius == 0.0 {
        return vec![0.0; d];
    }
    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm2(&g).max(1e-300);
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    g.into_iter().map(|x| x / n * r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_linear_instance, LinearParams};

    fn spec() -> LinearMdpSpec {
        gen_linear_instance(&LinearParams::new(4, 3, 2, 1, 5, 4, 1)).unwrap().1
    }

    #[test]
    fn kernels_are_distributions() {
        let sp = spec();
        let k = softmax_kernel(&sp, &[1.0, -2.0, 0.5], &[0.3, 0.0, -1.0]);
        for row in k.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let uni = softmax_kernel(&sp, &[0.0; 3], &[0.0; 3]);
        assert!(uni.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn coarse_resolution_is_a_single_policy() {
        let net = build_policy_net(&spec(), 2.0, 5.0, 64).unwrap();
        assert_eq!(net.len(), 1);
        assert!(net.covered);
        assert_eq!(net.measured_dim, None);
    }

    #[test]
    fn parameters_outside_ball_are_rejected() {
        assert!(SoftmaxPolicy::new(1.0, vec![(vec![2.0, 0.0], vec![0.0, 0.0])]).is_err());
    }
}
