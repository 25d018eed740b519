//! Experiment harness: configuration files, the independent-learning baseline,
//! and sample-complexity sweeps over the number of users.

use crate::completion::{recovery_curve, CurvePoint};
use crate::error::{Error, Result};
use crate::instances::{gen_tabular_instance, LinearParams, RewardMatrixSet, TabularParams};
use crate::linear::LinearPipelineConfig;
use crate::mdp::{backward_induction, exact_value, optimal_policy, TabularMdp};
use crate::report::{fmt_float, RunReport, RunStatus};
use crate::reward_free::EmpiricalExplorer;
use crate::rng::{self, tag};
use crate::rowwise::{measure_dist_constants, run_estimator, EstimatorOutput, PsiSampler, RowwiseConfig, SyntheticOracle};
use crate::tabular::{config_hash, run_tabular_pipeline, PipelineConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tabular,
    Linear,
    Baseline,
    CompletionCurve,
    Rowwise,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Tabular => "tabular",
            Mode::Linear => "linear",
            Mode::Baseline => "baseline",
            Mode::CompletionCurve => "completion-curve",
            Mode::Rowwise => "rowwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epsilon: f64,
    #[serde(default = "default_certify_every")]
    pub certify_every: u64,
    #[serde(default = "default_max_per_user")]
    pub max_per_user: u64,
}

fn default_certify_every() -> u64 {
    32
}
fn default_max_per_user() -> u64 {
    200_000
}

impl BaselineConfig {
    pub fn new(epsilon: f64) -> Self {
        BaselineConfig {
            epsilon,
            certify_every: default_certify_every(),
            max_per_user: default_max_per_user(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub rates: Vec<f64>,
    pub trials: usize,
}

/// Synthetic row-wise estimation problem: a random rank-`r` matrix measured
/// against draws from `sampler`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowwiseSpec {
    pub num_rows: usize,
    pub dim: usize,
    pub rank: usize,
    pub sampler: PsiSampler,
    #[serde(default = "default_c_rowwise")]
    pub c_mult: f64,
    #[serde(default = "default_dist_trials")]
    pub dist_trials: usize,
    #[serde(default = "default_extra_dirs")]
    pub extra_dirs: usize,
    #[serde(default)]
    pub verify_k: Option<usize>,
}

fn default_c_rowwise() -> f64 {
    0.33
}
fn default_dist_trials() -> usize {
    20_000
}
fn default_extra_dirs() -> usize {
    512
}

/// One experiment file. The section matching `mode` must be present; seeds
/// override the seeds stored in the instance and pipeline sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub tabular: Option<TabularParams>,
    #[serde(default)]
    pub linear: Option<LinearParams>,
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub linear_pipeline: Option<LinearPipelineConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub completion: Option<CurveSpec>,
    #[serde(default)]
    pub rowwise: Option<RowwiseSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str| Err(Error::Config(format!("mode {} needs a [{what}] section", self.mode.name())));
        match self.mode {
            Mode::Tabular if self.pipeline.is_none() => missing("pipeline"),
            Mode::Linear if self.linear_pipeline.is_none() => missing("linear_pipeline"),
            Mode::Baseline if self.baseline.is_none() && self.pipeline.is_none() => missing("baseline"),
            Mode::CompletionCurve if self.completion.is_none() => missing("completion"),
            Mode::Rowwise if self.rowwise.is_none() => missing("rowwise"),
            _ => Ok(()),
        }
    }

    /// Seeds to run: the configured list, else `0..count`.
    pub fn seed_list(&self, count: Option<usize>) -> Vec<u64> {
        match count {
            Some(n) => (0..n as u64).collect(),
            None if self.seeds.is_empty() => vec![0],
            None => self.seeds.clone(),
        }
    }

    pub fn baseline_config(&self) -> Option<BaselineConfig> {
        self.baseline
            .clone()
            .or_else(|| self.pipeline.as_ref().map(|p| BaselineConfig::new(p.epsilon)))
    }
}

/// Per-user trajectories and certified suboptimality of the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserBaseline {
    pub trajectories: u64,
    pub subopt: f64,
}

fn baseline_user(mdp: &TabularMdp, rewards: &RewardMatrixSet, user: usize, cfg: &BaselineConfig, seed: u64) -> Result<UserBaseline> {
    let reward = rewards.user_reward(user);
    let (_, best) = optimal_policy(mdp, &reward)?;
    let mut rng = rng::stream(seed, &[tag("baseline"), user as u64]);
    let mut ex = EmpiricalExplorer::new(mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut seen = vec![vec![0.0; mdp.num_pairs()]; mdp.horizon()];
    let every = cfg.certify_every.max(1);
    loop {
        let path = ex.step(mdp, &mut rng);
        for (h, &(s, a)) in path.iter().enumerate() {
            let p = mdp.pair(s, a);
            seen[h][p] = reward.values[h][p];
        }
        if ex.episodes() % every == 0 {
            let (model, _) = ex.model();
            let (pi, _) = backward_induction(&model, &seen);
            let subopt = best - exact_value(mdp, &reward, &pi)?;
            if subopt <= cfg.epsilon {
                return Ok(UserBaseline {
                    trajectories: ex.episodes(),
                    subopt,
                });
            }
        }
        if ex.episodes() >= cfg.max_per_user {
            return Err(Error::NonTermination {
                trajectories: ex.episodes(),
                cap: cfg.max_per_user,
                detail: format!("baseline user {user} not certified"),
            });
        }
    }
}

/// Every user explores alone, sees only its own rewards, and stops once its
/// planned policy is certified `ε`-optimal by the exact oracle.
pub fn run_baseline(mdp: &TabularMdp, rewards: &RewardMatrixSet, cfg: &BaselineConfig, seed: u64) -> Result<RunReport> {
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Config("baseline epsilon must be positive".into()));
    }
    let start = std::time::Instant::now();
    let n = rewards.num_users;
    let mut report = RunReport::new("baseline", seed, config_hash(cfg), mdp.horizon(), n);
    let users: Vec<UserBaseline> = (0..n)
        .into_par_iter()
        .map(|u| baseline_user(mdp, rewards, u, cfg, seed))
        .collect::<Result<_>>()?;
    report.add_phase("independent", users.iter().map(|u| u.trajectories).sum());
    report.user_subopt = users.iter().map(|u| u.subopt).collect();
    report.set_diag("per_user_trajectories", users.iter().map(|u| u.trajectories).collect::<Vec<_>>());
    report.status = RunStatus::Complete;
    report.wall_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

/// Collaborative and baseline cost for one `(N, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub num_users: usize,
    pub seed: u64,
    pub phase2: u64,
    pub collaborative_max_subopt: f64,
    pub baseline_total: u64,
    pub baseline_max_subopt: f64,
}

/// Run both methods on fresh instances for every user count and seed. Failed
/// collaborative runs are errors.
pub fn scaling_sweep(
    base: &TabularParams,
    users: &[usize],
    pipeline: &PipelineConfig,
    baseline: &BaselineConfig,
    seeds: &[u64],
) -> Result<Vec<ScalingRow>> {
    let cells: Vec<(usize, u64)> = users.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    cells
        .par_iter()
        .map(|&(n, seed)| {
            let params = TabularParams {
                num_users: n,
                seed,
                ..base.clone()
            };
            let (mdp, rewards) = gen_tabular_instance(&params)?;
            let cfg = PipelineConfig {
                seed,
                ..pipeline.clone()
            };
            let run = run_tabular_pipeline(&mdp, &rewards, &cfg)?;
            let base_report = run_baseline(&mdp, &rewards, baseline, seed)?;
            Ok(ScalingRow {
                num_users: n,
                seed,
                phase2: run.report.phase_trajectories("phase2").unwrap_or(0),
                collaborative_max_subopt: run.report.max_user_subopt(),
                baseline_total: base_report.total_trajectories(),
                baseline_max_subopt: base_report.max_user_subopt(),
            })
        })
        .collect()
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from("num_users,seed,phase2,collaborative_max_subopt,baseline_total,baseline_max_subopt\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.num_users,
            r.seed,
            r.phase2,
            fmt_float(r.collaborative_max_subopt),
            r.baseline_total,
            fmt_float(r.baseline_max_subopt)
        ));
    }
    s
}

pub fn run_completion_curve(spec: &CurveSpec, seed: u64) -> Result<Vec<CurvePoint>> {
    recovery_curve(spec.rows, spec.cols, spec.rank, &spec.rates, spec.trials, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowwiseOutcome {
    pub seed: u64,
    pub zeta_hat: f64,
    pub xi_hat: f64,
    pub iterations: usize,
    pub total_samples: u64,
    pub max_error: f64,
    #[serde(skip)]
    pub output: EstimatorOutput,
}

/// Draw `Θ* = AB/√d` with Gaussian factors, measure the sampler's isotropy
/// constants, and run the estimator on it.
pub fn run_rowwise_experiment(spec: &RowwiseSpec, seed: u64) -> Result<RowwiseOutcome> {
    let (n, d, r) = (spec.num_rows, spec.dim, spec.rank);
    if n == 0 || d == 0 || r == 0 || r > d.min(n) {
        return Err(Error::Config(format!("invalid row-wise shape {n}x{d} rank {r}")));
    }
    let mut g = rng::stream(seed, &[tag("rowwise"), tag("truth")]);
    let a = DMatrix::from_fn(n, r, |_, _| g.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(r, d, |_, _| g.sample::<f64, _>(StandardNormal));
    let theta = a * b / (d as f64).sqrt();
    let mut sr = rng::stream(seed, &[tag("rowwise"), tag("constants")]);
    let dc = measure_dist_constants(&mut || spec.sampler.draw(d, &mut sr), d, spec.dist_trials, spec.extra_dirs)?;
    if !dc.usable {
        return Err(Error::Precondition("sampler has no positive isotropy margin".into()));
    }
    let oracle = SyntheticOracle::new(theta.clone(), spec.sampler.clone());
    let mut cfg = RowwiseConfig::new(r, dc.zeta_hat, dc.xi_hat, spec.c_mult, seed);
    cfg.verify_k = spec.verify_k;
    let output = run_estimator(&oracle, &cfg)?;
    Ok(RowwiseOutcome {
        seed,
        zeta_hat: dc.zeta_hat,
        xi_hat: dc.xi_hat,
        iterations: output.state.iteration,
        total_samples: output.state.total_samples,
        max_error: (&output.theta_hat - &theta).amax(),
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_configs_parse() {
        let toml_text = r#"
mode = "tabular"
seeds = [1, 2]
[tabular]
num_users = 8
num_states = 3
num_actions = 2
horizon = 2
rank = 1
seed = 0
[pipeline]
epsilon = 0.1
delta = 0.1
seed = 0
"#;
        let cfg = ExperimentConfig::parse(toml_text).unwrap();
        assert_eq!(cfg.mode, Mode::Tabular);
        assert_eq!(cfg.seed_list(None), vec![1, 2]);
        assert_eq!(cfg.seed_list(Some(3)), vec![0, 1, 2]);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn missing_section_is_config_error() {
        let err = ExperimentConfig::parse("mode = \"rowwise\"\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn baseline_certifies_every_user() {
        let (mdp, rewards) = gen_tabular_instance(&TabularParams::new(6, 3, 2, 2, 1, 4)).unwrap();
        let cfg = BaselineConfig::new(0.05);
        let rep = run_baseline(&mdp, &rewards, &cfg, 9).unwrap();
        assert!(rep.user_subopt.iter().all(|&s| s <= 0.05 && s >= -1e-9));
        let per: Vec<u64> = serde_json::from_value(rep.diagnostics["per_user_trajectories"].clone()).unwrap();
        assert_eq!(per.iter().sum::<u64>(), rep.total_trajectories());
        assert!(per.iter().all(|k| k % 32 == 0));
        let mut again = run_baseline(&mdp, &rewards, &cfg, 9).unwrap();
        again.wall_ms = rep.wall_ms;
        assert_eq!(rep, again);
    }
}
