//! The four-phase collaborative pipeline for tabular MDPs: reward-free fit,
//! uniform mask sampling, per-step completion over the recovered columns and
//! per-user planning.

use crate::completion::{complete_fixed_rank, FixedRankOpts, MaskedMatrix};
use crate::error::{Error, Result};
use crate::instances::RewardMatrixSet;
use crate::mdp::{backward_induction, exact_value, optimal_policy, rollout, RewardFunction, TabularMdp, TabularPolicy};
use crate::report::{RunReport, RunStatus};
use crate::reward_free::{rf_fit, rf_plan, rf_plan_values, RfBackend, RfModel};
use crate::rng::{self, tag, Stream};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Fixed mask rate; when absent the rate comes from the theorem formula.
    #[serde(default)]
    pub mask_rate: Option<f64>,
    #[serde(default = "default_c")]
    pub const_multiplier: f64,
    #[serde(default = "one")]
    pub mu0: f64,
    #[serde(default = "one")]
    pub mu1: f64,
    pub seed: u64,
    #[serde(default)]
    pub rf_backend: RfBackend,
    #[serde(default)]
    pub rf_budget: u64,
    /// Multiple of the trajectory bound after which the sampler gives up.
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    #[serde(default)]
    pub completion: CompletionOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionOpts {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for CompletionOpts {
    fn default() -> Self {
        let d = FixedRankOpts::default();
        CompletionOpts {
            max_iters: d.max_iters,
            tol: d.tol,
            restarts: d.restarts,
        }
    }
}

fn default_c() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn default_safety() -> f64 {
    10.0
}

impl PipelineConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        PipelineConfig {
            epsilon,
            delta: 0.1,
            mask_rate: None,
            const_multiplier: default_c(),
            mu0: 1.0,
            mu1: 1.0,
            seed,
            rf_backend: RfBackend::Exact,
            rf_budget: 0,
            safety_factor: default_safety(),
            completion: CompletionOpts::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("epsilon must be positive and delta in (0,1)".into()));
        }
        if let Some(p) = self.mask_rate {
            if !(p > 0.0 && p <= 0.5) {
                return Err(Error::Config(format!("mask rate {p} outside (0, 1/2]")));
            }
        }
        if !(self.safety_factor >= 1.0) {
            return Err(Error::Config("safety_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mask rate with the clamping outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRate {
    pub p: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl MaskRate {
    pub fn usable(&self) -> Result<f64> {
        if self.p > 0.0 {
            Ok(self.p)
        } else {
            Err(Error::Config(format!("mask rate evaluates to {} and cannot be used", self.raw)))
        }
    }
}

/// `p = C·max(μ1², μ0)·r(N+|S||A|)·log²(|S||A|)·log(H/δ) / (N|S||A|)`, clamped to `(0, ½]`.
#[allow(clippy::too_many_arguments)]
pub fn mask_rate_from_theorem(
    n: usize,
    num_states: usize,
    num_actions: usize,
    r: usize,
    mu0: f64,
    mu1: f64,
    horizon: usize,
    delta: f64,
    c: f64,
) -> MaskRate {
    let sa = (num_states * num_actions) as f64;
    let raw = c * (mu1 * mu1).max(mu0) * r as f64 * (n as f64 + sa) * sa.ln().powi(2) * (horizon as f64 / delta).ln()
        / (n as f64 * sa);
    if !(raw > 0.0) {
        MaskRate { p: 0.0, raw, clamped: true }
    } else if raw > 0.5 {
        MaskRate { p: 0.5, raw, clamped: true }
    } else {
        MaskRate { p: raw, raw, clamped: false }
    }
}

/// `⌈N p⌉`, robust to representation error in `N p`.
pub fn quota(n: usize, p: f64) -> usize {
    let x = n as f64 * p;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `16 N p |S||A| H / ε`.
pub fn sampler_bound(n: usize, p: f64, num_pairs: usize, horizon: usize, epsilon: f64) -> f64 {
    16.0 * n as f64 * p * num_pairs as f64 * horizon as f64 / epsilon
}

/// Per-step sets of pairs that still need observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub sets: Vec<Vec<bool>>,
}

impl ActiveSets {
    pub fn full(horizon: usize, num_pairs: usize) -> Self {
        ActiveSets {
            sets: vec![vec![true; num_pairs]; horizon],
        }
    }

    pub fn indicator(&self) -> Vec<Vec<f64>> {
        self.sets
            .iter()
            .map(|g| g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(|g| g.iter().filter(|&&b| b).count()).collect()
    }

    /// Pairs outside `G_h`.
    pub fn complement(&self, h: usize) -> Vec<usize> {
        (0..self.sets[h].len()).filter(|&j| !self.sets[h][j]).collect()
    }

    pub fn is_subset_of(&self, other: &ActiveSets) -> bool {
        self.sets
            .iter()
            .zip(&other.sets)
            .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}

/// Observed reward entries with per-column counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRewardMatrix {
    pub num_users: usize,
    pub num_pairs: usize,
    pub quota: usize,
    /// Per step, row-major `N x |S||A|`.
    pub values: Vec<Vec<f64>>,
    pub observed: Vec<Vec<bool>>,
    pub counters: Vec<Vec<usize>>,
}

impl PartialRewardMatrix {
    pub fn new(horizon: usize, num_users: usize, num_pairs: usize, quota: usize) -> Self {
        PartialRewardMatrix {
            num_users,
            num_pairs,
            quota,
            values: vec![vec![0.0; num_users * num_pairs]; horizon],
            observed: vec![vec![false; num_users * num_pairs]; horizon],
            counters: vec![vec![0; num_pairs]; horizon],
        }
    }

    #[inline]
    pub fn is_observed(&self, h: usize, user: usize, pair: usize) -> bool {
        self.observed[h][user * self.num_pairs + pair]
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().flatten().filter(|&&b| b).count()
    }

    /// Observed entries of column block `cols` at step `h`.
    pub fn masked(&self, h: usize, cols: &[usize]) -> MaskedMatrix {
        let mut m = MaskedMatrix::new(self.num_users, cols.len());
        for u in 0..self.num_users {
            for (k, &c) in cols.iter().enumerate() {
                if self.is_observed(h, u, c) {
                    m.observe(u, k, self.values[h][u * self.num_pairs + c]);
                }
            }
        }
        m
    }
}

/// Query access to the users' rewards that counts every read.
pub struct AuditedRewards<'a> {
    rewards: &'a RewardMatrixSet,
    reads: AtomicU64,
}

impl<'a> AuditedRewards<'a> {
    pub fn new(rewards: &'a RewardMatrixSet) -> Self {
        AuditedRewards {
            rewards,
            reads: AtomicU64::new(0),
        }
    }

    pub fn read(&self, h: usize, user: usize, pair: usize) -> f64 {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.rewards.entry(h, user, pair)
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn num_users(&self) -> usize {
        self.rewards.num_users
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOutput {
    pub active: ActiveSets,
    pub partial: PartialRewardMatrix,
    pub trajectories: u64,
    /// Planned escape value `V̂(J(·; G))` at termination.
    pub final_value: f64,
    pub replans: u64,
}

/// Collect a uniform-mask sample of each reward matrix by repeatedly playing the
/// policy that maximizes the chance of hitting an active pair.
pub fn run_mask_sampler(
    rf: &RfModel,
    users: &AuditedRewards,
    mdp: &TabularMdp,
    epsilon: f64,
    p: f64,
    safety_factor: f64,
    rng: &mut Stream,
) -> Result<SamplerOutput> {
    let mut trace = |_: &ActiveSets| {};
    run_mask_sampler_traced(rf, users, mdp, epsilon, p, safety_factor, rng, &mut trace)
}

/// As [`run_mask_sampler`], calling `trace` with the active sets after every trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_mask_sampler_traced(
    rf: &RfModel,
    users: &AuditedRewards,
    mdp: &TabularMdp,
    epsilon: f64,
    p: f64,
    safety_factor: f64,
    rng: &mut Stream,
    trace: &mut dyn FnMut(&ActiveSets),
) -> Result<SamplerOutput> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Config(format!("mask rate {p} outside (0, 1/2]")));
    }
    let n = users.num_users();
    let (h_n, m) = (mdp.horizon(), mdp.num_pairs());
    let q = quota(n, p);
    let mut active = ActiveSets::full(h_n, m);
    let mut partial = PartialRewardMatrix::new(h_n, n, m, q);
    let (mut policy, mut value) = rf_plan_values(rf, &active.indicator());
    let cap = (safety_factor * sampler_bound(n, p, m, h_n, epsilon)).ceil() as u64;
    let mut t: u64 = 0;
    let mut replans = 0;
    while value > epsilon / 2.0 {
        if t >= cap {
            return Err(Error::NonTermination {
                trajectories: t,
                cap,
                detail: format!("active set sizes {:?}, planned escape value {value:.4e}", active.sizes()),
            });
        }
        let user = rng.gen_range(0..n);
        let path = rollout(mdp, &policy, rng);
        let mut changed = false;
        for (h, &(s, a)) in path.iter().enumerate() {
            let pair = mdp.pair(s, a);
            let idx = user * m + pair;
            if active.sets[h][pair] && !partial.observed[h][idx] {
                partial.values[h][idx] = users.read(h, user, pair);
                partial.observed[h][idx] = true;
                partial.counters[h][pair] += 1;
                if partial.counters[h][pair] == q {
                    active.sets[h][pair] = false;
                    changed = true;
                }
            }
        }
        t += 1;
        trace(&active);
        if changed {
            let (pi, v) = rf_plan_values(rf, &active.indicator());
            policy = pi;
            value = v;
            replans += 1;
        }
    }
    Ok(SamplerOutput {
        active,
        partial,
        trajectories: t,
        final_value: value,
        replans,
    })
}

/// Completed columns `G_h^∁` of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedBlock {
    pub columns: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub residual: f64,
}

/// Complete each step's reward matrix restricted to the columns outside `G_h`.
pub fn complete_rewards(
    partial: &PartialRewardMatrix,
    active: &ActiveSets,
    r: usize,
    opts: &CompletionOpts,
    seed: u64,
) -> Result<Vec<CompletedBlock>> {
    (0..active.sets.len())
        .into_par_iter()
        .map(|h| {
            let cols = active.complement(h);
            for &c in &cols {
                if partial.counters[h][c] != partial.quota {
                    return Err(Error::Precondition(format!(
                        "column {c} at step {h} has {} observations, expected {}",
                        partial.counters[h][c], partial.quota
                    )));
                }
            }
            let mm = partial.masked(h, &cols);
            if cols.is_empty() || mm.mask.iter().all(|&b| b) {
                return Ok(CompletedBlock {
                    columns: cols,
                    matrix: mm.zero_filled(),
                    residual: 0.0,
                });
            }
            let rank = r.min(partial.num_users).min(cols.len());
            let fr = FixedRankOpts {
                max_iters: opts.max_iters,
                tol: opts.tol,
                restarts: opts.restarts,
                seed: rng::derive_key(seed, &[tag("tabular"), tag("completion"), h as u64]),
            };
            let res = complete_fixed_rank(&mm, rank, &fr)?;
            if !res.converged {
                return Err(Error::Recovery {
                    step: h,
                    residual: res.residual,
                    reason: "observed entries not interpolated".into(),
                });
            }
            if res.identifiable == Some(false) {
                return Err(Error::Recovery {
                    step: h,
                    residual: res.residual,
                    reason: "mask does not determine the rank-r completion".into(),
                });
            }
            Ok(CompletedBlock {
                columns: cols,
                matrix: res.completed,
                residual: res.residual,
            })
        })
        .collect()
}

/// `R̄_h`: recovered columns outside `G_h`, zero on `G_h`, clamped into `[0,1]`.
pub fn assemble(completed: &[CompletedBlock], num_users: usize, num_pairs: usize) -> Vec<Vec<f64>> {
    completed
        .iter()
        .map(|b| {
            let mut r = vec![0.0; num_users * num_pairs];
            for u in 0..num_users {
                for (k, &c) in b.columns.iter().enumerate() {
                    r[u * num_pairs + c] = b.matrix[(u, k)].clamp(0.0, 1.0);
                }
            }
            r
        })
        .collect()
}

/// Plan every user against `R̄` with the reward-free model.
pub fn assemble_and_plan(
    completed: &[CompletedBlock],
    rf: &RfModel,
    num_users: usize,
) -> Result<Vec<(TabularPolicy, f64)>> {
    let m = rf.model.num_pairs();
    let bar = assemble(completed, num_users, m);
    (0..num_users)
        .into_par_iter()
        .map(|u| {
            let values = bar.iter().map(|r| r[u * m..(u + 1) * m].to_vec()).collect();
            rf_plan(rf, &RewardFunction { values })
        })
        .collect()
}

/// Everything a tabular run produces besides the report.
#[derive(Debug, Clone)]
pub struct TabularRun {
    pub report: RunReport,
    pub policies: Vec<TabularPolicy>,
    pub sampler: SamplerOutput,
    pub reward_reads: u64,
}

pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let text = serde_json::to_string(cfg).unwrap_or_default();
    crate::instances::bundle::checksum(text.as_bytes())
}

pub fn resolve_mask_rate(mdp: &TabularMdp, rewards: &RewardMatrixSet, cfg: &PipelineConfig) -> MaskRate {
    match cfg.mask_rate {
        Some(p) => MaskRate { p, raw: p, clamped: false },
        None => mask_rate_from_theorem(
            rewards.num_users,
            mdp.num_states(),
            mdp.num_actions(),
            rewards.rank,
            cfg.mu0,
            cfg.mu1,
            mdp.horizon(),
            cfg.delta,
            cfg.const_multiplier,
        ),
    }
}

/// True suboptimality of each user's policy.
pub fn user_suboptimality(mdp: &TabularMdp, rewards: &RewardMatrixSet, policies: &[TabularPolicy]) -> Result<Vec<f64>> {
    policies
        .par_iter()
        .enumerate()
        .map(|(u, pi)| {
            let r = rewards.user_reward(u);
            let (_, best) = optimal_policy(mdp, &r)?;
            Ok(best - exact_value(mdp, &r, pi)?)
        })
        .collect()
}

/// `sup_Π Σ_h P^Π(S_h, A_h ∈ G_h)` on the true dynamics.
pub fn escape_value(mdp: &TabularMdp, active: &ActiveSets) -> f64 {
    backward_induction(mdp, &active.indicator()).1
}

pub fn run_tabular_pipeline(mdp: &TabularMdp, rewards: &RewardMatrixSet, cfg: &PipelineConfig) -> Result<TabularRun> {
    run_tabular_pipeline_with(mdp, rewards, cfg, &mut |_| {})
}

/// Run all four phases, handing the partial report to `on_phase` after each one.
pub fn run_tabular_pipeline_with(
    mdp: &TabularMdp,
    rewards: &RewardMatrixSet,
    cfg: &PipelineConfig,
    on_phase: &mut dyn FnMut(&RunReport),
) -> Result<TabularRun> {
    cfg.validate()?;
    if rewards.num_pairs != mdp.num_pairs() || rewards.horizon() != mdp.horizon() {
        return Err(Error::Instance("reward matrices do not match the MDP".into()));
    }
    let start = std::time::Instant::now();
    let n = rewards.num_users;
    let mut report = RunReport::new("tabular", cfg.seed, config_hash(cfg), mdp.horizon(), n);
    let rate = resolve_mask_rate(mdp, rewards, cfg);
    report.set_diag("mask_rate", rate);
    let fail = |report: &mut RunReport, e: &Error, on_phase: &mut dyn FnMut(&RunReport)| {
        report.status = RunStatus::Failed;
        report.failure = Some(e.to_string());
        report.wall_ms = start.elapsed().as_millis() as u64;
        on_phase(report);
    };
    let p = match rate.usable() {
        Ok(p) => p,
        Err(e) => {
            fail(&mut report, &e, on_phase);
            return Err(e);
        }
    };
    report.set_diag("quota", quota(n, p));

    let mut rf_rng = rng::stream(cfg.seed, &[tag("tabular"), tag("phase1")]);
    let rf = rf_fit(mdp, cfg.rf_budget, cfg.rf_backend, &mut rf_rng)?;
    report.add_phase("phase1", rf.trajectories_used);
    report.set_diag("rf_low_confidence", rf.low_confidence);
    report.set_diag("independent_estimate", n as u64 * rf.trajectories_used);
    on_phase(&report);

    let audit = AuditedRewards::new(rewards);
    let mut s_rng = rng::stream(cfg.seed, &[tag("tabular"), tag("phase2")]);
    let sampler = match run_mask_sampler(&rf, &audit, mdp, cfg.epsilon, p, cfg.safety_factor, &mut s_rng) {
        Ok(s) => s,
        Err(e) => {
            fail(&mut report, &e, on_phase);
            return Err(e);
        }
    };
    report.add_phase("phase2", sampler.trajectories);
    report.set_diag("sampler_bound", sampler_bound(n, p, mdp.num_pairs(), mdp.horizon(), cfg.epsilon));
    report.set_diag("active_set_sizes", sampler.active.sizes());
    report.set_diag("planned_escape_value", sampler.final_value);
    report.set_diag("true_escape_value", escape_value(mdp, &sampler.active));
    on_phase(&report);

    let completed = match complete_rewards(&sampler.partial, &sampler.active, rewards.rank, &cfg.completion, cfg.seed) {
        Ok(c) => c,
        Err(e) => {
            fail(&mut report, &e, on_phase);
            return Err(e);
        }
    };
    report.add_phase("phase3", 0);
    report.recovery_residuals = completed.iter().map(|b| b.residual).collect();
    report.recovery_errors = completed
        .iter()
        .enumerate()
        .map(|(h, b)| {
            let mut worst: f64 = 0.0;
            for u in 0..n {
                for (k, &c) in b.columns.iter().enumerate() {
                    worst = worst.max((b.matrix[(u, k)] - rewards.entry(h, u, c)).abs());
                }
            }
            worst
        })
        .collect();
    on_phase(&report);

    let planned = assemble_and_plan(&completed, &rf, n)?;
    let policies: Vec<TabularPolicy> = planned.into_iter().map(|(pi, _)| pi).collect();
    report.add_phase("phase4", 0);
    report.user_subopt = user_suboptimality(mdp, rewards, &policies)?;
    report.status = RunStatus::Complete;
    report.wall_ms = start.elapsed().as_millis() as u64;
    on_phase(&report);
    Ok(TabularRun {
        report,
        policies,
        reward_reads: audit.reads(),
        sampler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_tabular_instance, TabularParams};

    #[test]
    fn theorem_rate_arithmetic() {
        let r = mask_rate_from_theorem(64, 8, 4, 2, 1.0, 1.0, 3, 0.1, 1.0);
        // independent evaluation: 2 * 96 * ln(32)^2 * ln(30) / 2048
        let l32 = 3.465_735_902_799_726_5_f64;
        let l30 = 3.401_197_381_662_155_f64;
        let expect = 2.0 * 96.0 * l32 * l32 * l30 / 2048.0;
        assert!((r.raw - expect).abs() < 1e-12 * expect);
        assert!(r.clamped && r.p == 0.5);
        let zero = mask_rate_from_theorem(64, 8, 4, 2, 1.0, 1.0, 3, 0.1, 0.0);
        assert!(zero.clamped && zero.p == 0.0 && zero.usable().is_err());
        let small = mask_rate_from_theorem(64, 8, 4, 2, 1.0, 1.0, 3, 0.1, 1e-3);
        assert!(!small.clamped && (small.p - 1e-3 * expect).abs() < 1e-15);
    }

    #[test]
    fn quota_rounds_up() {
        assert_eq!(quota(64, 0.4), 26);
        assert_eq!(quota(10, 0.3), 3);
        assert_eq!(quota(64, 0.5), 32);
    }

    #[test]
    fn loose_epsilon_returns_immediately() {
        let (mdp, rs) = gen_tabular_instance(&TabularParams::new(8, 3, 2, 2, 1, 1)).unwrap();
        let rf = rf_fit(&mdp, 0, RfBackend::Exact, &mut rng::stream(0, &[])).unwrap();
        let audit = AuditedRewards::new(&rs);
        let out = run_mask_sampler(&rf, &audit, &mdp, 4.0, 0.5, 10.0, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(out.trajectories, 0);
        assert_eq!(out.active, ActiveSets::full(2, 6));
        assert_eq!(audit.reads(), 0);
    }

    #[test]
    fn sampler_observations_match_truth() {
        let (mdp, rs) = gen_tabular_instance(&TabularParams::new(16, 3, 2, 2, 2, 4)).unwrap();
        let rf = rf_fit(&mdp, 0, RfBackend::Exact, &mut rng::stream(0, &[])).unwrap();
        let audit = AuditedRewards::new(&rs);
        let out = run_mask_sampler(&rf, &audit, &mdp, 0.1, 0.5, 10.0, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(audit.reads() as usize, out.partial.num_observed());
        for h in 0..2 {
            for u in 0..16 {
                for c in 0..6 {
                    if out.partial.is_observed(h, u, c) {
                        assert_eq!(out.partial.values[h][u * 6 + c], rs.entry(h, u, c));
                    }
                }
            }
            for c in 0..6 {
                assert!(out.partial.counters[h][c] <= out.partial.quota);
                if !out.active.sets[h][c] {
                    assert_eq!(out.partial.counters[h][c], out.partial.quota);
                }
            }
        }
    }

    #[test]
    fn empty_active_sets_plan_true_optimum() {
        let (mdp, rs) = gen_tabular_instance(&TabularParams::new(6, 3, 2, 2, 1, 8)).unwrap();
        let rf = rf_fit(&mdp, 0, RfBackend::Exact, &mut rng::stream(0, &[])).unwrap();
        let blocks: Vec<CompletedBlock> = (0..2)
            .map(|h| CompletedBlock {
                columns: (0..6).collect(),
                matrix: rs.matrix(h),
                residual: 0.0,
            })
            .collect();
        let out = assemble_and_plan(&blocks, &rf, 6).unwrap();
        for (u, (_, v)) in out.iter().enumerate() {
            let best = optimal_policy(&mdp, &rs.user_reward(u)).unwrap().1;
            assert!((v - best).abs() < 1e-10);
        }
        let zero: Vec<CompletedBlock> = (0..2)
            .map(|_| CompletedBlock {
                columns: vec![],
                matrix: DMatrix::zeros(6, 0),
                residual: 0.0,
            })
            .collect();
        assert!(assemble_and_plan(&zero, &rf, 6).unwrap().iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn small_pipeline_is_exact_and_deterministic() {
        let (mdp, rs) = gen_tabular_instance(&TabularParams::new(20, 5, 3, 2, 1, 3)).unwrap();
        let mut cfg = PipelineConfig::new(0.05, 11);
        cfg.mask_rate = Some(0.5);
        let a = run_tabular_pipeline(&mdp, &rs, &cfg).unwrap();
        assert!(a.report.max_user_subopt() <= 0.05);
        let b = run_tabular_pipeline(&mdp, &rs, &cfg).unwrap();
        let mut ra = a.report.clone();
        let mut rb = b.report.clone();
        ra.wall_ms = 0;
        rb.wall_ms = 0;
        assert_eq!(ra, rb);
    }

    #[test]
    fn uncovered_rows_fail_recovery() {
        let (mdp, rs) = gen_tabular_instance(&TabularParams::new(12, 3, 2, 2, 1, 3)).unwrap();
        let mut cfg = PipelineConfig::new(0.05, 11);
        cfg.mask_rate = Some(0.5);
        let mut last = None;
        let err = run_tabular_pipeline_with(&mdp, &rs, &cfg, &mut |r| last = Some(r.clone())).unwrap_err();
        assert!(matches!(err, Error::Recovery { .. }));
        let rep = last.unwrap();
        assert_eq!(rep.status, RunStatus::Failed);
        assert_eq!(rep.phases.len(), 2);
    }
}
