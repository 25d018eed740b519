use super::diagnostics::{dist_prop_check, DistPropReport};
use super::planning::plan_users_linear;
use super::policy::build_policy_net;
use super::sampler::{run_well_conditioned_sampler, GrammianData};
use super::search::{policy_search_fh, SearchConfig, SearchResult};
use crate::error::{Error, Result};
use crate::instances::{LinearMdpSpec, ThetaSet};
use crate::lowdisc::direction_set;
use crate::mdp::{exact_value, optimal_policy, TabularMdp, TabularPolicy};
use crate::report::{RunReport, RunStatus};
use crate::reward_free::{rf_fit, RfBackend};
use crate::rng::{self, tag};
use crate::rowwise::{run_estimator, FitOpts, IterationLog, RolloutOracle, RowwiseConfig};
use crate::tabular::config_hash;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPipelineConfig {
    pub zeta: f64,
    pub xi: f64,
    /// Sampler tolerance; carried for completeness, the sampler stops on `T`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub kappa: f64,
    pub t: usize,
    pub eta: f64,
    pub eta0: f64,
    #[serde(default = "default_dirs")]
    pub x_directions: usize,
    #[serde(default)]
    pub nu_net: usize,
    #[serde(default = "default_net_budget")]
    pub net_budget: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_prefix_budget")]
    pub prefix_budget: usize,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Multiplier of the row-wise sample schedule.
    #[serde(default = "default_c_rowwise")]
    pub c_rowwise: f64,
    #[serde(default)]
    pub verify_k: Option<usize>,
    #[serde(default)]
    pub fit: FitOpts,
    #[serde(default)]
    pub rf_backend: RfBackend,
    #[serde(default)]
    pub rf_budget: u64,
    pub seed: u64,
}

fn default_gamma() -> f64 {
    0.1
}
fn default_dirs() -> usize {
    512
}
fn default_net_budget() -> usize {
    64
}
fn default_radius() -> f64 {
    2.0
}
fn default_prefix_budget() -> usize {
    4096
}
fn default_delta() -> f64 {
    0.1
}
fn default_c_rowwise() -> f64 {
    0.33
}

impl LinearPipelineConfig {
    pub fn new(zeta: f64, xi: f64, kappa: f64, t: usize, epsilon: f64, seed: u64) -> Self {
        LinearPipelineConfig {
            zeta,
            xi,
            gamma: default_gamma(),
            kappa,
            t,
            eta: 0.5,
            eta0: 0.1,
            x_directions: default_dirs(),
            nu_net: 0,
            net_budget: default_net_budget(),
            radius: default_radius(),
            prefix_budget: default_prefix_budget(),
            epsilon,
            delta: default_delta(),
            c_rowwise: default_c_rowwise(),
            verify_k: None,
            fit: FitOpts::default(),
            rf_backend: RfBackend::Exact,
            rf_budget: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.xi > 0.0 && self.gamma > 0.0 && self.eta0 > 0.0 && self.eta > 0.0) {
            return Err(Error::Config("zeta, xi, gamma, eta and eta0 must be positive".into()));
        }
        if !(self.kappa > 0.0) || self.t == 0 || !(self.epsilon > 0.0) {
            return Err(Error::Config("kappa, T and epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            xi: self.xi,
            eta0: self.eta0,
            x_directions: self.x_directions,
            prefix_budget: self.prefix_budget,
            nu_net: self.nu_net,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearRun {
    pub report: RunReport,
    pub theta_hat: ThetaSet,
    pub policies: Vec<TabularPolicy>,
    pub grammian: GrammianData,
    pub searches: Vec<SearchResult>,
    pub dist_checks: Vec<DistPropReport>,
    pub estimator_logs: Vec<Vec<IterationLog>>,
}

pub fn run_linear_pipeline(
    mdp: &TabularMdp,
    spec: &LinearMdpSpec,
    theta: &ThetaSet,
    cfg: &LinearPipelineConfig,
) -> Result<LinearRun> {
    run_linear_pipeline_with(mdp, spec, theta, cfg, &mut |_| {})
}

/// Reward-free fit, Grammian sampling with per-step policy search, row-wise
/// estimation of every `Θ_h`, and per-user planning.
pub fn run_linear_pipeline_with(
    mdp: &TabularMdp,
    spec: &LinearMdpSpec,
    theta: &ThetaSet,
    cfg: &LinearPipelineConfig,
    on_phase: &mut dyn FnMut(&RunReport),
) -> Result<LinearRun> {
    cfg.validate()?;
    spec.validate(mdp)?;
    let start = std::time::Instant::now();
    let (n, h_n) = (theta.num_users, mdp.horizon());
    let mut report = RunReport::new("linear", cfg.seed, config_hash(cfg), h_n, n);
    let fail = |report: &mut RunReport, e: Error, on_phase: &mut dyn FnMut(&RunReport)| -> Error {
        report.status = RunStatus::Failed;
        report.failure = Some(e.to_string());
        report.wall_ms = start.elapsed().as_millis() as u64;
        on_phase(report);
        e
    };

    let mut rf_rng = rng::stream(cfg.seed, &[tag("linear"), tag("phase1")]);
    let rf = rf_fit(mdp, cfg.rf_budget, cfg.rf_backend, &mut rf_rng)?;
    report.add_phase("phase1", rf.trajectories_used);
    report.set_diag("rf_low_confidence", rf.low_confidence);

    let mut s_rng = rng::stream(cfg.seed, &[tag("linear"), tag("phase2")]);
    let grammian = match run_well_conditioned_sampler(mdp, spec, &rf, n, cfg.t, cfg.kappa, &mut s_rng) {
        Ok(g) => g,
        Err(e) => return Err(fail(&mut report, e, on_phase)),
    };
    report.set_diag("lambda_min", grammian.steps.iter().map(|s| s.lambda_min).collect::<Vec<_>>());
    let net = match build_policy_net(spec, cfg.eta, cfg.radius, cfg.net_budget) {
        Ok(net) => net,
        Err(e) => return Err(fail(&mut report, e, on_phase)),
    };
    report.set_diag("net_size", net.len());
    report.set_diag("net_covering_radius", net.covering_radius);
    let scfg = cfg.search();
    let searches: Vec<SearchResult> = match (0..h_n)
        .into_par_iter()
        .map(|h| policy_search_fh(h, spec, &grammian, &net, &scfg))
        .collect::<Result<_>>()
    {
        Ok(s) => s,
        Err(e) => return Err(fail(&mut report, e, on_phase)),
    };
    report.add_phase("phase2", grammian.trajectories);
    report.set_diag("certified_values", searches.iter().map(|s| s.certified_value).collect::<Vec<_>>());
    let dirs = direction_set(spec.dim, cfg.x_directions);
    let mc_policies: Vec<TabularPolicy> = searches
        .iter()
        .map(|s| s.policy.to_tabular(spec, mdp))
        .collect::<Result<_>>()?;
    let dist_checks: Vec<DistPropReport> = mc_policies
        .iter()
        .enumerate()
        .map(|(h, pi)| dist_prop_check(pi, spec, mdp, h, cfg.zeta / 2.0, cfg.xi, &dirs))
        .collect::<Result<_>>()?;
    report.set_diag("dist_prop_passes", dist_checks.iter().map(|c| c.passes).collect::<Vec<_>>());
    on_phase(&report);

    let mut thetas = Vec::with_capacity(h_n);
    let mut logs = Vec::with_capacity(h_n);
    let mut samples = 0u64;
    for (h, pi) in mc_policies.iter().enumerate() {
        let oracle = RolloutOracle::new(mdp, spec, theta, h, pi.clone());
        let rcfg = RowwiseConfig {
            rank: theta.rank,
            zeta: cfg.zeta / 2.0,
            xi: cfg.xi,
            delta: cfg.delta,
            c_mult: cfg.c_rowwise,
            verify_k: cfg.verify_k,
            verify_tol: 1e-8,
            fit: cfg.fit,
            seed: rng::derive_key(cfg.seed, &[tag("linear"), tag("phase3"), h as u64]),
        };
        let out = match run_estimator(&oracle, &rcfg) {
            Ok(o) => o,
            Err(e) => {
                report.add_phase("phase3", samples);
                return Err(fail(&mut report, e, on_phase));
            }
        };
        samples += out.state.total_samples;
        report
            .recovery_residuals
            .push(out.state.log.last().map(|l| l.fit_loss).unwrap_or(0.0));
        report
            .recovery_errors
            .push((&out.theta_hat - theta.matrix(h)).amax());
        thetas.push(out.theta_hat.transpose().as_slice().to_vec());
        logs.push(out.state.log);
    }
    report.add_phase("phase3", samples);
    let theta_hat = ThetaSet {
        num_users: n,
        dim: spec.dim,
        rank: theta.rank,
        thetas,
    };
    on_phase(&report);

    let plan = match plan_users_linear(&theta_hat, &rf, spec) {
        Ok(p) => p,
        Err(e) => return Err(fail(&mut report, e, on_phase)),
    };
    report.warnings.extend(plan.warnings.iter().cloned());
    let policies: Vec<TabularPolicy> = plan.plans.into_iter().map(|(pi, _)| pi).collect();
    report.user_subopt = policies
        .par_iter()
        .enumerate()
        .map(|(u, pi)| {
            let r = theta.user_reward(spec, u)?;
            Ok(optimal_policy(mdp, &r)?.1 - exact_value(mdp, &r, pi)?)
        })
        .collect::<Result<_>>()?;
    report.add_phase("phase4", 0);
    report.status = RunStatus::Complete;
    report.wall_ms = start.elapsed().as_millis() as u64;
    on_phase(&report);
    Ok(LinearRun {
        report,
        theta_hat,
        policies,
        grammian,
        searches,
        dist_checks,
        estimator_logs: logs,
    })
}
