//! Well-conditioned Grammian sampler.

use crate::error::{Error, Result};
use crate::instances::LinearMdpSpec;
use crate::linalg::sym_eigen;
use crate::mdp::{rollout, TabularMdp, TabularPolicy};
use crate::reward_free::{rf_plan_values, RfModel};
use crate::rng::Stream;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Samples collected at one step: features at `h` and the successor states at `h+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepData {
    /// Row-major `T x d`.
    pub phis: Vec<f64>,
    pub next_states: Vec<usize>,
    /// Row-major `d x d`.
    pub gram: Vec<f64>,
    pub lambda_min: f64,
    pub replans: u64,
}

impl StepData {
    pub fn len(&self) -> usize {
        self.next_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next_states.is_empty()
    }

    pub fn phi(&self, t: usize, dim: usize) -> &[f64] {
        &self.phis[t * dim..(t + 1) * dim]
    }

    pub fn gram_matrix(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(dim, dim, &self.gram)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammianData {
    pub dim: usize,
    pub num_states: usize,
    pub kappa: f64,
    pub t: usize,
    /// Initial states of the first step's trajectories.
    pub init_states: Vec<usize>,
    /// One entry per step `h < H-1`.
    pub steps: Vec<StepData>,
    pub trajectories: u64,
}

/// `‖Qφ(s,a)‖²` at step `h` and zero elsewhere, for `Q` with orthonormal columns `basis`.
fn projector_reward(spec: &LinearMdpSpec, horizon: usize, h: usize, basis: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut values = vec![vec![0.0; spec.num_pairs()]; horizon];
    for (p, x) in values[h].iter_mut().enumerate() {
        let phi = spec.phi_row(p);
        *x = (0..basis.ncols())
            .map(|c| {
                let proj: f64 = (0..spec.dim).map(|i| basis[(i, c)] * phi[i]).sum();
                proj * proj
            })
            .sum::<f64>()
            .min(1.0);
    }
    values
}

/// Collect `T` trajectories per step `h < H-1`, steering towards the directions in
/// which the running Grammian is still below `κ²`.
pub fn run_well_conditioned_sampler(
    mdp: &TabularMdp,
    spec: &LinearMdpSpec,
    rf: &RfModel,
    num_users: usize,
    t: usize,
    kappa: f64,
    rng: &mut Stream,
) -> Result<GrammianData> {
    if num_users == 0 || t == 0 {
        return Err(Error::Config("sampler needs users and a positive T".into()));
    }
    let (d, h_n) = (spec.dim, mdp.horizon());
    let thresh = kappa * kappa;
    let mut init_states = Vec::new();
    let mut steps = Vec::new();
    let mut trajectories = 0u64;
    if h_n == 1 {
        let pi = TabularPolicy::uniform(mdp);
        for _ in 0..t {
            let _user = rng.gen_range(0..num_users);
            init_states.push(rollout(mdp, &pi, rng)[0].0);
            trajectories += 1;
        }
    }
    for h in 0..h_n.saturating_sub(1) {
        let mut basis = DMatrix::<f64>::identity(d, d);
        let mut policy = rf_plan_values(rf, &projector_reward(spec, h_n, h, &basis)).0;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut phis = Vec::with_capacity(t * d);
        let mut next_states = Vec::with_capacity(t);
        let mut replans = 0;
        for _ in 0..t {
            let _user = rng.gen_range(0..num_users);
            let path = rollout(mdp, &policy, rng);
            trajectories += 1;
            if h == 0 {
                init_states.push(path[0].0);
            }
            let (s, a) = path[h];
            let phi = spec.phi_row(mdp.pair(s, a));
            for i in 0..d {
                for j in 0..d {
                    gram[(i, j)] += phi[i] * phi[j];
                }
            }
            phis.extend_from_slice(phi);
            next_states.push(path[h + 1].0);
            let (vals, vecs) = sym_eigen(&gram);
            let low: Vec<usize> = (0..d).filter(|&k| vals[k] < thresh).collect();
            if !low.is_empty() {
                basis = DMatrix::from_fn(d, low.len(), |i, c| vecs[(i, low[c])]);
                policy = rf_plan_values(rf, &projector_reward(spec, h_n, h, &basis)).0;
                replans += 1;
            }
        }
        let (vals, vecs) = sym_eigen(&gram);
        if vals[0] < thresh {
            let mut direction: Vec<f64> = vecs.column(0).iter().copied().collect();
            let k = (0..d).fold(0, |k, i| if direction[i].abs() > direction[k].abs() { i } else { k });
            if direction[k] < 0.0 {
                direction.iter_mut().for_each(|x| *x = -*x);
            }
            return Err(Error::Deficient {
                step: h,
                lambda_min: vals[0],
                threshold: thresh,
                direction,
            });
        }
        steps.push(StepData {
            phis,
            next_states,
            gram: gram.transpose().as_slice().to_vec(),
            lambda_min: vals[0],
            replans,
        });
    }
    Ok(GrammianData {
        dim: d,
        num_states: spec.num_states,
        kappa,
        t,
        init_states,
        steps,
        trajectories,
    })
}
