use collabrl::bench::{run_rowwise_experiment, RowwiseSpec};
use collabrl::rng::{self, tag};
use collabrl::rowwise::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn spec(n: usize, d: usize, r: usize) -> RowwiseSpec {
    RowwiseSpec {
        num_rows: n,
        dim: d,
        rank: r,
        sampler: PsiSampler::Sphere { scale: 1.0 },
        c_mult: 0.33,
        dist_trials: 5000,
        extra_dirs: 128,
        verify_k: None,
    }
}

fn check_accounting(out: &EstimatorOutput, d: usize) {
    let verify_k = 2 * d as u64;
    let mut expected = 0u64;
    let mut prev_unknown: Option<usize> = None;
    for l in &out.state.log {
        expected += (l.k_t * l.unknown_rows) as u64 + verify_k * l.unknown_rows as u64;
        assert_eq!(l.cumulative_samples, expected);
        assert_eq!(l.verified + l.rejected, l.unknown_rows);
        if let Some(p) = prev_unknown {
            assert_eq!(l.unknown_rows, p, "next round works on exactly the rejected rows");
        }
        prev_unknown = Some(l.rejected);
    }
    assert_eq!(out.state.total_samples, expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn verification_keeps_exactly_the_correct_rows(n in 4usize..20, d in 2usize..8, seed in any::<u64>()) {
        let mut g = rng::stream(seed, &[tag("truth")]);
        let truth = DMatrix::from_fn(n, d, |_, _| g.gen_range(-1.0..1.0));
        let bad: Vec<bool> = (0..n).map(|_| g.gen::<bool>()).collect();
        let mut cand = truth.clone();
        for i in (0..n).filter(|&i| bad[i]) {
            cand[(i, g.gen_range(0..d))] += 1e-3;
        }
        let oracle = SyntheticOracle::new(truth, PsiSampler::Sphere { scale: 1.0 });
        let rows: Vec<usize> = (0..n).collect();
        let v = verify_rows(&cand, &oracle, &rows, 2 * d, 1e-8, seed, 1).unwrap();
        for &i in &v.verified {
            prop_assert!(!bad[i]);
        }
        prop_assert_eq!(v.verified.len() + v.rejected.len(), n);
        prop_assert_eq!(v.rejected.len(), bad.iter().filter(|&&b| b).count());
        prop_assert_eq!(v.samples, (n * 2 * d) as u64);
    }

    #[test]
    fn verified_rows_match_the_truth(seed in 0u64..1000) {
        let out = run_rowwise_experiment(&spec(30, 8, 2), seed).unwrap();
        prop_assert!(out.max_error <= 1e-6, "max error {}", out.max_error);
        prop_assert!(out.output.state.recovered.iter().all(|&x| x));
        check_accounting(&out.output, 8);
    }
}

#[test]
fn unknown_sets_shrink_tenfold_in_most_rounds() {
    let (mut rounds, mut shrunk) = (0, 0);
    for seed in 0..10 {
        let out = run_rowwise_experiment(&spec(100, 20, 3), seed).unwrap();
        check_accounting(&out.output, 20);
        for l in &out.output.state.log {
            rounds += 1;
            if l.rejected * 10 <= l.unknown_rows {
                shrunk += 1;
            }
        }
    }
    assert!(shrunk as f64 >= 0.9 * rounds as f64, "{shrunk} of {rounds} rounds shrank tenfold");
}

#[test]
fn starved_budget_rejects_instead_of_accepting_wrong_rows() {
    let mut g = rng::stream(5, &[tag("truth")]);
    let (n, d, r) = (40, 10, 2);
    let a = DMatrix::from_fn(n, r, |_, _| g.gen_range(-1.0..1.0));
    let b = DMatrix::from_fn(r, d, |_, _| g.gen_range(-1.0..1.0));
    let truth = a * b;
    let oracle = SyntheticOracle::new(truth.clone(), PsiSampler::Sphere { scale: 1.0 });
    let cfg = RowwiseConfig::new(r, 0.8, 1.0, 1e-3, 5);
    match run_estimator(&oracle, &cfg) {
        Ok(out) => assert!((&out.theta_hat - &truth).amax() <= 1e-6),
        Err(e) => assert_eq!(e.exit_code(), 4, "{e}"),
    }
}

#[test]
fn point_mass_measurements_are_unusable() {
    let psi = vec![1.0, 0.0, 0.0];
    let mut draw = || psi.clone();
    let dc = measure_dist_constants(&mut draw, 3, 2000, 16).unwrap();
    assert!(!dc.usable && dc.zeta_hat.abs() < 1e-12);
}

#[test]
fn halving_the_measurements_halves_zeta_and_doubles_xi() {
    let run = |scale: f64| {
        let s = PsiSampler::Sphere { scale };
        let mut g = rng::stream(3, &[tag("constants")]);
        measure_dist_constants(&mut || s.draw(6, &mut g), 6, 4000, 64).unwrap()
    };
    let (full, half) = (run(1.0), run(0.5));
    assert!((half.zeta_hat - 0.5 * full.zeta_hat).abs() < 1e-12);
    assert!((half.xi_hat - 2.0 * full.xi_hat).abs() < 1e-9);
}
