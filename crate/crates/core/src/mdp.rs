//! Finite episodic MDPs, trajectory sampling and exact dynamic-programming oracles.
//!
//! Steps are indexed `0..H`. Pairs `(s, a)` are flattened to `s * |A| + a`.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const PROB_TOL: f64 = 1e-12;

/// Shared dynamics of every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    init_dist: Vec<f64>,
    /// `transitions[h]` is the row-major `(|S||A|) x |S|` kernel from step `h` to `h+1`.
    transitions: Vec<Vec<f64>>,
}

/// Plain document form used for (de)serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub init_dist: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;
    fn try_from(d: MdpDocument) -> Result<Self> {
        // stored documents are validated but kept bit-for-bit
        let m = TabularMdp::new(d.num_states, d.num_actions, d.horizon, d.init_dist.clone(), d.transitions.clone())?;
        Ok(TabularMdp {
            init_dist: d.init_dist,
            transitions: d.transitions,
            ..m
        })
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        MdpDocument {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            init_dist: m.init_dist,
            transitions: m.transitions,
        }
    }
}

fn normalize_prob(v: &mut [f64], what: &str) -> Result<()> {
    check_prob(v, what)?;
    let s: f64 = v.iter().sum();
    if s != 1.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    Ok(())
}

fn check_prob(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Instance(format!("{what}: negative or non-finite probability")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Instance(format!("{what}: sums to {s:.17}, expected 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        mut init_dist: Vec<f64>,
        mut transitions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::Instance("num_states, num_actions and horizon must be positive".into()));
        }
        if init_dist.len() != num_states {
            return Err(Error::Instance(format!(
                "init_dist has length {}, expected {num_states}",
                init_dist.len()
            )));
        }
        normalize_prob(&mut init_dist, "init_dist")?;
        if transitions.len() != horizon - 1 {
            return Err(Error::Instance(format!(
                "expected {} transition kernels, got {}",
                horizon - 1,
                transitions.len()
            )));
        }
        let sa = num_states * num_actions;
        for (h, p) in transitions.iter_mut().enumerate() {
            if p.len() != sa * num_states {
                return Err(Error::Instance(format!("transition kernel {h} has wrong size")));
            }
            for (i, row) in p.chunks_mut(num_states).enumerate() {
                normalize_prob(row, &format!("transition kernel {h} row {i}"))?;
            }
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            horizon,
            init_dist,
            transitions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }
    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// `P_h(· | s, a)`.
    #[inline]
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.pair(s, a) * self.num_states;
        &self.transitions[h][i..i + self.num_states]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Deterministic per-step rewards `R_h(s, a)` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction {
    pub values: Vec<Vec<f64>>,
}

impl RewardFunction {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        for (h, v) in values.iter().enumerate() {
            if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Contract(format!("reward {x} at step {h} outside [0,1]")));
            }
        }
        Ok(RewardFunction { values })
    }

    pub fn constant(mdp: &TabularMdp, c: f64) -> Self {
        RewardFunction {
            values: vec![vec![c; mdp.num_pairs()]; mdp.horizon()],
        }
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.values.len() != mdp.horizon() || self.values.iter().any(|v| v.len() != mdp.num_pairs()) {
            return Err(Error::Instance("reward dimensions do not match the MDP".into()));
        }
        Ok(())
    }
}

/// Markov policy kernels `π_h(a | s)` stored row-major `|S| x |A|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub kernels: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(mdp: &TabularMdp, mut kernels: Vec<Vec<f64>>) -> Result<Self> {
        if kernels.len() != mdp.horizon() {
            return Err(Error::Instance("policy horizon mismatch".into()));
        }
        for (h, k) in kernels.iter_mut().enumerate() {
            if k.len() != mdp.num_pairs() {
                return Err(Error::Instance(format!("policy kernel {h} has wrong size")));
            }
            for (s, row) in k.chunks_mut(mdp.num_actions()).enumerate() {
                normalize_prob(row, &format!("policy step {h} state {s}"))?;
            }
        }
        Ok(TabularPolicy { kernels })
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let p = 1.0 / mdp.num_actions() as f64;
        TabularPolicy {
            kernels: vec![vec![p; mdp.num_pairs()]; mdp.horizon()],
        }
    }

    /// Deterministic policy from `actions[h][s]`.
    pub fn deterministic(mdp: &TabularMdp, actions: &[Vec<usize>]) -> Self {
        let a_n = mdp.num_actions();
        let kernels = actions
            .iter()
            .map(|row| {
                let mut k = vec![0.0; mdp.num_pairs()];
                for (s, &a) in row.iter().enumerate() {
                    k[s * a_n + a] = 1.0;
                }
                k
            })
            .collect();
        TabularPolicy { kernels }
    }

    #[inline]
    pub fn dist(&self, h: usize, s: usize, num_actions: usize) -> &[f64] {
        &self.kernels[h][s * num_actions..(s + 1) * num_actions]
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.kernels.len() != mdp.horizon() || self.kernels.iter().any(|k| k.len() != mdp.num_pairs()) {
            return Err(Error::Instance("policy dimensions do not match the MDP".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

/// Law of `(S_h, A_h)` for each step, flattened over pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyProfile {
    pub dists: Vec<Vec<f64>>,
}

impl OccupancyProfile {
    /// State marginal at step `h`.
    pub fn state_marginal(&self, h: usize, num_actions: usize) -> Vec<f64> {
        self.dists[h].chunks(num_actions).map(|c| c.iter().sum()).collect()
    }
}

/// Inverse-CDF draw from a finite distribution.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// State-action path of one episode; rewards are left to the caller.
pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &TabularPolicy, rng: &mut R) -> Vec<(usize, usize)> {
    let a_n = mdp.num_actions();
    let mut path = Vec::with_capacity(mdp.horizon());
    let mut s = categorical(mdp.init_dist(), rng);
    for h in 0..mdp.horizon() {
        let a = categorical(policy.dist(h, s, a_n), rng);
        path.push((s, a));
        if h + 1 < mdp.horizon() {
            s = categorical(mdp.next_dist(h, s, a), rng);
        }
    }
    path
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    reward: &RewardFunction,
    policy: &TabularPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    reward.check(mdp)?;
    policy.check(mdp)?;
    let steps = rollout(mdp, policy, rng)
        .into_iter()
        .enumerate()
        .map(|(h, (s, a))| Step {
            state: s,
            action: a,
            reward: reward.values[h][mdp.pair(s, a)],
        })
        .collect();
    Ok(Trajectory { steps })
}

/// Push a state distribution through `P_h` after mixing in `π_h`.
fn push_forward(mdp: &TabularMdp, h: usize, occ: &[f64]) -> Vec<f64> {
    let s_n = mdp.num_states();
    let mut next = vec![0.0; s_n];
    for (i, &m) in occ.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let row = &mdp.transitions[h][i * s_n..(i + 1) * s_n];
        for (n, &p) in next.iter_mut().zip(row) {
            *n += m * p;
        }
    }
    next
}

pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyProfile> {
    policy.check(mdp)?;
    let a_n = mdp.num_actions();
    let mut dists = Vec::with_capacity(mdp.horizon());
    let mut state = mdp.init_dist().to_vec();
    for h in 0..mdp.horizon() {
        let mut d = vec![0.0; mdp.num_pairs()];
        for (s, &ps) in state.iter().enumerate() {
            for (a, &pa) in policy.dist(h, s, a_n).iter().enumerate() {
                d[s * a_n + a] = ps * pa;
            }
        }
        if h + 1 < mdp.horizon() {
            state = push_forward(mdp, h, &d);
        }
        dists.push(d);
    }
    Ok(OccupancyProfile { dists })
}

/// Expected return of `policy` under arbitrary real per-step values.
pub fn value_of(mdp: &TabularMdp, values: &[Vec<f64>], policy: &TabularPolicy) -> Result<f64> {
    let occ = occupancy(mdp, policy)?;
    Ok(occ
        .dists
        .iter()
        .zip(values)
        .map(|(d, r)| d.iter().zip(r).map(|(x, y)| x * y).sum::<f64>())
        .sum())
}

pub fn exact_value(mdp: &TabularMdp, reward: &RewardFunction, policy: &TabularPolicy) -> Result<f64> {
    reward.check(mdp)?;
    value_of(mdp, &reward.values, policy)
}

/// Backward induction for arbitrary real per-step values; ties go to the lowest action.
pub fn backward_induction(mdp: &TabularMdp, values: &[Vec<f64>]) -> (TabularPolicy, f64) {
    let (s_n, a_n, h_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut v_next = vec![0.0; s_n];
    let mut actions = vec![vec![0usize; s_n]; h_n];
    for h in (0..h_n).rev() {
        let mut v = vec![0.0; s_n];
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..a_n {
                let mut q = values[h][s * a_n + a];
                if h + 1 < h_n {
                    q += mdp
                        .next_dist(h, s, a)
                        .iter()
                        .zip(&v_next)
                        .map(|(p, w)| p * w)
                        .sum::<f64>();
                }
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            actions[h][s] = best_a;
        }
        v_next = v;
    }
    let value = mdp.init_dist().iter().zip(&v_next).map(|(p, v)| p * v).sum();
    (TabularPolicy::deterministic(mdp, &actions), value)
}

pub fn optimal_policy(mdp: &TabularMdp, reward: &RewardFunction) -> Result<(TabularPolicy, f64)> {
    reward.check(mdp)?;
    Ok(backward_induction(mdp, &reward.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn chain() -> TabularMdp {
        // action 0 moves s0 -> s1, action 1 stays; s1 absorbing
        TabularMdp::new(
            2,
            2,
            2,
            vec![1.0, 0.0],
            vec![vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn single_path_rewards() {
        let mdp = TabularMdp::new(1, 1, 2, vec![1.0], vec![vec![1.0]]).unwrap();
        let r = RewardFunction::constant(&mdp, 1.0);
        let t = sample_trajectory(&mdp, &r, &TabularPolicy::uniform(&mdp), &mut rng::stream(0, &[])).unwrap();
        assert_eq!(t.steps.iter().map(|s| s.reward).collect::<Vec<_>>(), vec![1.0, 1.0]);
    }

    #[test]
    fn deterministic_chain_path() {
        let mdp = chain();
        let pol = TabularPolicy::deterministic(&mdp, &[vec![0, 0], vec![0, 0]]);
        let r = RewardFunction::constant(&mdp, 0.0);
        let t = sample_trajectory(&mdp, &r, &pol, &mut rng::stream(3, &[])).unwrap();
        assert_eq!(t.steps[0].state, 0);
        assert_eq!(t.steps[1].state, 1);
        let occ = occupancy(&mdp, &pol).unwrap();
        assert_eq!(occ.dists[1], vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_product_occupancy() {
        let mdp = TabularMdp::new(2, 2, 1, vec![0.5, 0.5], vec![]).unwrap();
        let occ = occupancy(&mdp, &TabularPolicy::uniform(&mdp)).unwrap();
        assert_eq!(occ.dists[0], vec![0.25; 4]);
    }

    #[test]
    fn bandit_argmax() {
        let mdp = TabularMdp::new(1, 3, 1, vec![1.0], vec![]).unwrap();
        let r = RewardFunction::new(vec![vec![0.2, 0.9, 0.5]]).unwrap();
        let (pol, v) = optimal_policy(&mdp, &r).unwrap();
        assert_eq!(pol.kernels[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(v, 0.9);
    }

    #[test]
    fn ties_pick_lowest_action() {
        let mdp = TabularMdp::new(1, 3, 1, vec![1.0], vec![]).unwrap();
        let r = RewardFunction::new(vec![vec![0.5, 0.5, 0.5]]).unwrap();
        let (pol, _) = optimal_policy(&mdp, &r).unwrap();
        assert_eq!(pol.kernels[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TabularMdp::new(2, 1, 2, vec![0.5, 0.5], vec![vec![0.6, 0.6, 0.5, 0.5]]).is_err());
        assert!(TabularMdp::new(1, 1, 1, vec![1.0 + 1e-9], vec![]).is_err());
        assert!(RewardFunction::new(vec![vec![1.5]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mdp = chain();
        let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn dimension_mismatch_is_instance_error() {
        let mdp = chain();
        let r = RewardFunction { values: vec![vec![0.0; 3]; 2] };
        let err = sample_trajectory(&mdp, &r, &TabularPolicy::uniform(&mdp), &mut rng::stream(0, &[]));
        assert!(matches!(err, Err(Error::Instance(_))));
    }
}
