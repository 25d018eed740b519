use collabrl::completion::*;
use collabrl::linalg::svd;
use collabrl::rng::{self, tag};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn masked(truth: &DMatrix<f64>, rate: f64, rng: &mut rng::Stream) -> MaskedMatrix {
    let mut m = MaskedMatrix::new(truth.nrows(), truth.ncols());
    for i in 0..truth.nrows() {
        for j in 0..truth.ncols() {
            if rng.gen::<f64>() < rate {
                m.observe(i, j, truth[(i, j)]);
            }
        }
    }
    m
}

fn opts(seed: u64) -> FixedRankOpts {
    FixedRankOpts { seed, ..FixedRankOpts::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_rank_output_respects_rank_and_interpolates(n1 in 4usize..16, n2 in 4usize..16, r in 1usize..3, rate in 0.3f64..0.9, seed in any::<u64>()) {
        let mut g = rng::stream(seed, &[tag("props")]);
        let truth = random_low_rank(n1, n2, r, &mut g);
        let m = masked(&truth, rate, &mut g);
        let res = complete_fixed_rank(&m, r, &opts(seed)).unwrap();
        prop_assert!(svd(&res.completed).rank(1e-10) <= r);
        prop_assert!((m.residual(&res.completed) - res.residual).abs() <= 1e-12);
        if res.converged {
            prop_assert!(m.residual(&res.completed) <= 1e-9);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic(seed in any::<u64>()) {
        let mut g = rng::stream(seed, &[tag("props")]);
        let truth = random_low_rank(10, 12, 2, &mut g);
        let m = masked(&truth, 0.4, &mut g);
        prop_assert_eq!(complete_fixed_rank(&m, 2, &opts(seed)).unwrap(), complete_fixed_rank(&m, 2, &opts(seed)).unwrap());
        let n = NuclearOpts { max_iters: 500, ..NuclearOpts::default() };
        prop_assert_eq!(complete_nuclear(&m, &n).unwrap(), complete_nuclear(&m, &n).unwrap());
    }
}

#[test]
fn solvers_agree_above_the_recovery_threshold() {
    let mut agreed = 0;
    for seed in 0..10u64 {
        let mut g = rng::stream(seed, &[tag("agree")]);
        let truth = random_low_rank(20, 20, 1, &mut g);
        let m = masked(&truth, 0.5, &mut g);
        let a = complete_fixed_rank(&m, 1, &opts(seed)).unwrap();
        let b = complete_nuclear(&m, &NuclearOpts::default()).unwrap();
        if a.converged && b.converged {
            let gap = (&a.completed - &b.completed).amax();
            assert!(gap <= 1e-5, "seed {seed}: solvers differ by {gap}");
            agreed += 1;
        }
    }
    assert!(agreed >= 8, "only {agreed} of 10 seeds had both solvers converge");
}

#[test]
fn fully_observed_matrix_is_returned_unchanged() {
    let truth = random_low_rank(6, 9, 2, &mut rng::stream(1, &[]));
    let res = complete_fixed_rank(&MaskedMatrix::fully_observed(&truth), 2, &opts(1)).unwrap();
    assert!((res.completed - &truth).amax() < 1e-9);
}

#[test]
fn recovery_curve_is_monotone_across_the_transition() {
    let rates = [0.05, 0.1, 0.2, 0.4];
    let pts = recovery_curve(20, 20, 1, &rates, 20, 3).unwrap();
    for w in pts.windows(2) {
        assert!(w[1].successes >= w[0].successes, "{pts:?}");
    }
    assert!(pts[0].fraction() < 0.5 && pts[3].fraction() >= 0.95, "{pts:?}");
    assert_eq!(curve_csv(&pts).lines().count(), rates.len() + 1);
}

#[test]
fn rank_above_the_shape_is_a_precondition_error() {
    let m = MaskedMatrix::new(3, 2);
    assert_eq!(complete_fixed_rank(&m, 3, &opts(0)).unwrap_err().exit_code(), 2);
}
