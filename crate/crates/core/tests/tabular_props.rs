use collabrl::instances::{gen_tabular_instance, RewardMatrixSet, TabularParams};
use collabrl::mdp::TabularMdp;
use collabrl::reward_free::{rf_fit, RfBackend};
use collabrl::rng::{self, tag};
use collabrl::tabular::*;
use proptest::prelude::*;

fn instance(n: usize, s: usize, a: usize, h: usize, r: usize, seed: u64) -> (TabularMdp, RewardMatrixSet) {
    gen_tabular_instance(&TabularParams::new(n, s, a, h, r, seed)).unwrap()
}

fn sample(mdp: &TabularMdp, rs: &RewardMatrixSet, eps: f64, p: f64, seed: u64) -> (SamplerOutput, u64, Vec<ActiveSets>) {
    let rf = rf_fit(mdp, 0, RfBackend::Exact, &mut rng::stream(seed, &[])).unwrap();
    let audit = AuditedRewards::new(rs);
    let mut trace = Vec::new();
    let out = run_mask_sampler_traced(&rf, &audit, mdp, eps, p, 10.0, &mut rng::stream(seed, &[tag("sampler")]), &mut |a| {
        trace.push(a.clone())
    })
    .unwrap();
    (out, audit.reads(), trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampler_invariants(n in 8usize..24, s in 2usize..5, a in 2usize..4, h in 1usize..4, p in 0.2f64..0.5, seed in any::<u64>()) {
        let (mdp, rs) = instance(n, s, a, h, 1, seed);
        let eps = 0.1;
        let (out, reads, trace) = sample(&mdp, &rs, eps, p, seed);
        let q = quota(n, p);
        let m = mdp.num_pairs();
        // only visited entries are ever read, and each is read once
        prop_assert_eq!(reads as usize, out.partial.num_observed());
        for step in 0..h {
            for c in 0..m {
                let seen = (0..n).filter(|&u| out.partial.is_observed(step, u, c)).count();
                prop_assert_eq!(seen, out.partial.counters[step][c]);
                prop_assert!(seen <= q);
                if !out.active.sets[step][c] {
                    prop_assert_eq!(seen, q);
                }
                for u in (0..n).filter(|&u| out.partial.is_observed(step, u, c)) {
                    prop_assert_eq!(out.partial.values[step][u * m + c], rs.entry(step, u, c));
                }
            }
        }
        // exact backend: the planned escape value is the true one
        let escape = escape_value(&mdp, &out.active);
        prop_assert!(escape <= 5.0 * eps / 8.0, "escape {}", escape);
        prop_assert!((escape - out.final_value).abs() < 1e-12);
        let full = ActiveSets::full(h, m);
        let mut prev = &full;
        for cur in &trace {
            prop_assert!(cur.is_subset_of(prev));
            prev = cur;
        }
        prop_assert_eq!(trace.len() as u64, out.trajectories);
        prop_assert!((out.trajectories as f64) <= 10.0 * sampler_bound(n, p, m, h, eps));
    }

    #[test]
    fn recovered_runs_are_epsilon_optimal(seed in any::<u64>()) {
        let (mdp, rs) = instance(24, 3, 2, 2, 1, seed);
        let mut cfg = PipelineConfig::new(0.1, seed);
        cfg.mask_rate = Some(0.5);
        if let Ok(run) = run_tabular_pipeline(&mdp, &rs, &cfg) {
            if run.report.recovery_errors.iter().all(|&e| e <= 1e-6) {
                prop_assert!(run.report.max_user_subopt() <= 0.1, "subopt {:?}", run.report.user_subopt);
            }
        }
    }

    #[test]
    fn report_totals_are_conserved(seed in any::<u64>(), budget in 0u64..200) {
        let (mdp, rs) = instance(16, 3, 2, 2, 1, seed);
        let mut cfg = PipelineConfig::new(0.1, seed);
        cfg.mask_rate = Some(0.5);
        cfg.rf_backend = RfBackend::Empirical;
        cfg.rf_budget = budget;
        let mut last = None;
        let res = run_tabular_pipeline_with(&mdp, &rs, &cfg, &mut |r| last = Some(r.clone()));
        let report = last.unwrap();
        let sum: u64 = report.phases.iter().map(|p| p.trajectories).sum();
        prop_assert_eq!(report.total_trajectories(), sum);
        prop_assert_eq!(report.phase_trajectories("phase1"), Some(budget));
        if let Ok(run) = res {
            prop_assert_eq!(run.report.phase_trajectories("phase2"), Some(run.sampler.trajectories));
            prop_assert_eq!(run.report.total_trajectories(), budget + run.sampler.trajectories);
            prop_assert_eq!(run.reward_reads as usize, run.sampler.partial.num_observed());
        }
    }
}

#[test]
fn exact_backend_at_half_rate_is_optimal_on_a_small_instance() {
    let (mdp, rs) = instance(32, 4, 4, 2, 1, 3);
    let mut cfg = PipelineConfig::new(0.05, 3);
    cfg.mask_rate = Some(0.5);
    let run = run_tabular_pipeline(&mdp, &rs, &cfg).unwrap();
    assert!(run.report.max_user_subopt() <= 1e-9, "{:?}", run.report.user_subopt);
}

#[test]
fn fixed_seed_gives_identical_reports() {
    let (mdp, rs) = instance(32, 4, 4, 2, 2, 5);
    let mut cfg = PipelineConfig::new(0.1, 5);
    cfg.mask_rate = Some(0.5);
    let mut a = run_tabular_pipeline(&mdp, &rs, &cfg).unwrap().report;
    let b = run_tabular_pipeline(&mdp, &rs, &cfg).unwrap().report;
    a.wall_ms = b.wall_ms;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn mask_rate_above_half_is_a_config_error() {
    let (mdp, rs) = instance(8, 2, 2, 2, 1, 0);
    let mut cfg = PipelineConfig::new(0.1, 0);
    cfg.mask_rate = Some(0.7);
    assert_eq!(run_tabular_pipeline(&mdp, &rs, &cfg).unwrap_err().exit_code(), 2);
}
