//! Reward-free exploration backends answering `(Π̂(R), V̂(R))` planning queries.

use crate::error::{Error, Result};
use crate::mdp::{backward_induction, rollout, RewardFunction, TabularMdp, TabularPolicy};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RfBackend {
    #[default]
    Exact,
    Empirical,
}

/// Output of the exploration phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub mode: RfBackend,
    /// Estimated dynamics (the true ones in exact mode).
    pub model: TabularMdp,
    /// Per step, visit counts of each pair.
    pub visit_counts: Vec<Vec<u64>>,
    pub trajectories_used: u64,
    /// Transition rows that were never visited and fell back to uniform.
    pub unvisited_rows: usize,
    pub low_confidence: bool,
}

/// Count-based empirical model with least-visited-cell exploration.
#[derive(Debug, Clone)]
pub struct EmpiricalExplorer {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    init_counts: Vec<u64>,
    /// Per transition step, row-major `(|S||A|) x |S|` counts.
    trans_counts: Vec<Vec<u64>>,
    visit_counts: Vec<Vec<u64>>,
    episodes: u64,
}

impl EmpiricalExplorer {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let sa = num_states * num_actions;
        EmpiricalExplorer {
            num_states,
            num_actions,
            horizon,
            init_counts: vec![0; num_states],
            trans_counts: vec![vec![0; sa * num_states]; horizon.saturating_sub(1)],
            visit_counts: vec![vec![0; sa]; horizon],
            episodes: 0,
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn visit_counts(&self) -> &[Vec<u64>] {
        &self.visit_counts
    }

    /// Maximum-likelihood model; unvisited rows are uniform. Returns the model and
    /// the number of uniform rows.
    pub fn model(&self) -> (TabularMdp, usize) {
        let s_n = self.num_states;
        let uniform = 1.0 / s_n as f64;
        let mut fallback = 0;
        let norm = |c: &[u64], fallback: &mut usize| -> Vec<f64> {
            let t: u64 = c.iter().sum();
            if t == 0 {
                *fallback += 1;
                vec![uniform; c.len()]
            } else {
                c.iter().map(|&x| x as f64 / t as f64).collect()
            }
        };
        let mut f0 = 0;
        let init = norm(&self.init_counts, &mut f0);
        let transitions = self
            .trans_counts
            .iter()
            .map(|p| p.chunks(s_n).flat_map(|row| norm(row, &mut fallback)).collect())
            .collect();
        let mdp = TabularMdp::new(s_n, self.num_actions, self.horizon, init, transitions)
            .expect("empirical model is stochastic by construction");
        (mdp, fallback + f0)
    }

    /// Indicator reward on the least-visited pairs of every step.
    pub fn exploration_reward(&self) -> Vec<Vec<f64>> {
        self.visit_counts
            .iter()
            .map(|c| {
                let m = c.iter().copied().min().unwrap_or(0);
                c.iter().map(|&x| if x == m { 1.0 } else { 0.0 }).collect()
            })
            .collect()
    }

    /// Plan an exploration policy on the current empirical model.
    pub fn exploration_policy(&self) -> TabularPolicy {
        let (model, _) = self.model();
        backward_induction(&model, &self.exploration_reward()).0
    }

    pub fn record(&mut self, path: &[(usize, usize)]) {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if let Some(&(s0, _)) = path.first() {
            self.init_counts[s0] += 1;
        }
        for (h, &(s, a)) in path.iter().enumerate() {
            self.visit_counts[h][s * a_n + a] += 1;
            if h + 1 < path.len() {
                let next = path[h + 1].0;
                self.trans_counts[h][(s * a_n + a) * s_n + next] += 1;
            }
        }
        self.episodes += 1;
    }

    /// Plan, roll out on the true dynamics, record. Returns the visited path.
    pub fn step(&mut self, mdp: &TabularMdp, rng: &mut Stream) -> Vec<(usize, usize)> {
        let pol = self.exploration_policy();
        let path = rollout(mdp, &pol, rng);
        self.record(&path);
        path
    }
}

/// Fit a reward-free model. In exact mode the budget is ignored and the true
/// dynamics are copied.
pub fn rf_fit(mdp: &TabularMdp, budget: u64, backend: RfBackend, rng: &mut Stream) -> Result<RfModel> {
    match backend {
        RfBackend::Exact => Ok(RfModel {
            mode: RfBackend::Exact,
            model: mdp.clone(),
            visit_counts: vec![vec![0; mdp.num_pairs()]; mdp.horizon()],
            trajectories_used: 0,
            unvisited_rows: 0,
            low_confidence: false,
        }),
        RfBackend::Empirical => {
            let mut ex = EmpiricalExplorer::new(mdp.num_states(), mdp.num_actions(), mdp.horizon());
            for _ in 0..budget {
                ex.step(mdp, rng);
            }
            let (model, unvisited_rows) = ex.model();
            Ok(RfModel {
                mode: RfBackend::Empirical,
                model,
                visit_counts: ex.visit_counts.clone(),
                trajectories_used: budget,
                unvisited_rows,
                low_confidence: budget == 0 || unvisited_rows > 0,
            })
        }
    }
}

/// Plan against the fitted model for an arbitrary real-valued reward table.
pub fn rf_plan_values(model: &RfModel, values: &[Vec<f64>]) -> (TabularPolicy, f64) {
    backward_induction(&model.model, values)
}

pub fn rf_plan(model: &RfModel, reward: &RewardFunction) -> Result<(TabularPolicy, f64)> {
    let m = &model.model;
    if reward.values.len() != m.horizon() || reward.values.iter().any(|v| v.len() != m.num_pairs()) {
        return Err(Error::Instance("reward dimensions do not match the model".into()));
    }
    for (h, v) in reward.values.iter().enumerate() {
        if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Contract(format!("reward {x} at step {h} outside [0,1]")));
        }
    }
    Ok(rf_plan_values(model, &reward.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_value, optimal_policy};
    use crate::rng;

    fn chain() -> TabularMdp {
        TabularMdp::new(2, 2, 2, vec![1.0, 0.0], vec![vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn exact_backend_is_the_true_model() {
        let mdp = chain();
        let m = rf_fit(&mdp, 0, RfBackend::Exact, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(m.model, mdp);
        let r = RewardFunction::new(vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.9, 0.0, 0.5, 0.7]]).unwrap();
        let (_, v) = rf_plan(&m, &r).unwrap();
        assert!((v - optimal_policy(&mdp, &r).unwrap().1).abs() < 1e-12);
    }

    #[test]
    fn deterministic_rows_learned_exactly() {
        let mdp = chain();
        let m = rf_fit(&mdp, 50, RfBackend::Empirical, &mut rng::stream(1, &[])).unwrap();
        // s0 is the only start state; both actions from s0 are deterministic
        for a in 0..2 {
            assert_eq!(m.model.next_dist(0, 0, a), mdp.next_dist(0, 0, a));
        }
        assert_eq!(m.trajectories_used, 50);
        // s1 is never visited at step 0 so its rows fall back to uniform
        assert_eq!(m.unvisited_rows, 2);
        assert!(m.low_confidence);
    }

    #[test]
    fn zero_budget_is_flagged() {
        let mdp = chain();
        let m = rf_fit(&mdp, 0, RfBackend::Empirical, &mut rng::stream(1, &[])).unwrap();
        assert!(m.low_confidence);
        assert_eq!(m.model.init_dist(), &[0.5, 0.5]);
    }

    #[test]
    fn out_of_range_reward_is_contract_violation() {
        let mdp = chain();
        let m = rf_fit(&mdp, 0, RfBackend::Exact, &mut rng::stream(0, &[])).unwrap();
        let r = RewardFunction { values: vec![vec![2.0; 4]; 2] };
        assert!(matches!(rf_plan(&m, &r), Err(Error::Contract(_))));
        let zero = RewardFunction::constant(&mdp, 0.0);
        assert_eq!(rf_plan(&m, &zero).unwrap().1, 0.0);
        let _ = exact_value(&mdp, &zero, &TabularPolicy::uniform(&mdp)).unwrap();
    }
}
