use collabrl::instances::*;
use collabrl::linalg::svd;
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tabular_rewards_have_exact_rank(n in 4usize..24, s in 2usize..6, a in 1usize..4, h in 1usize..4, r in 1usize..3, seed in any::<u64>()) {
        prop_assume!(2 * r <= n.min(s * a));
        let p = TabularParams::new(n, s, a, h, r, seed);
        let (mdp, rs) = gen_tabular_instance(&p).unwrap();
        prop_assert_eq!(mdp.num_pairs(), s * a);
        for step in 0..h {
            let d = svd(&rs.matrix(step));
            prop_assert!(d.rank(1e-10) <= r, "step {} singular values {:?}", step, d.s);
            prop_assert!(rs.matrices[step].iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn tabular_generation_is_pure(seed in any::<u64>()) {
        let p = TabularParams::new(12, 3, 2, 2, 2, seed);
        prop_assert_eq!(gen_tabular_instance(&p).unwrap(), gen_tabular_instance(&p).unwrap());
    }

    #[test]
    fn linear_kernels_factor_through_embeddings(s in 2usize..8, a in 2usize..5, d in 2usize..6, seed in any::<u64>()) {
        prop_assume!(d <= s * a);
        let p = LinearParams::new(2 * d, d, 3, 1, s, a, seed);
        let (mdp, spec, theta) = gen_linear_instance(&p).unwrap();
        prop_assert!(spec.consistency_error(&mdp) < 1e-10);
        for step in 0..3 {
            prop_assert!(svd(&theta.matrix(step)).rank(1e-10) <= 1);
        }
        for u in 0..theta.num_users {
            prop_assert!(theta.user_reward(&spec, u).is_ok());
        }
    }

    #[test]
    fn all_ones_matrix_is_perfectly_incoherent(rows in 1usize..20, cols in 1usize..20) {
        let c = coherence(&DMatrix::from_element(rows, cols, 1.0), 1).unwrap();
        prop_assert!((c.mu0 - 1.0).abs() < 1e-10);
        prop_assert!((c.mu1 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn bundles_round_trip_exactly() {
    let p = TabularParams::new(16, 4, 2, 3, 2, 7);
    let (mdp, rs) = gen_tabular_instance(&p).unwrap();
    let b = Bundle::tabular(p, mdp, rs);
    assert_eq!(Bundle::from_json(&b.to_json().unwrap()).unwrap(), b);

    let p = LinearParams::new(8, 3, 2, 1, 4, 3, 7);
    let (mdp, spec, theta) = gen_linear_instance(&p).unwrap();
    let b = Bundle::linear(p, mdp, spec, theta);
    assert_eq!(Bundle::from_json(&b.to_json().unwrap()).unwrap(), b);
}

#[test]
fn saved_bundle_checksum_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let p = TabularParams::new(16, 4, 2, 2, 2, 3);
    let (mdp, rs) = gen_tabular_instance(&p).unwrap();
    let b = Bundle::tabular(p, mdp, rs);
    let a1 = b.save(&dir.path().join("a.json")).unwrap();
    let a2 = b.save(&dir.path().join("b.json")).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(Bundle::load(&dir.path().join("a.json")).unwrap(), b);
}

#[test]
fn rank_above_half_the_short_side_is_rejected() {
    let err = gen_tabular_instance(&TabularParams::new(6, 3, 2, 2, 4, 0)).unwrap_err();
    assert!(err.to_string().contains("low-rank assumption"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn corrupted_bundle_is_a_schema_error() {
    let p = TabularParams::new(8, 2, 2, 2, 1, 0);
    let (mdp, rs) = gen_tabular_instance(&p).unwrap();
    let mut b = Bundle::tabular(p, mdp, rs);
    b.rewards.as_mut().unwrap().matrices[0].pop();
    assert_eq!(Bundle::from_json(&b.to_json().unwrap()).unwrap_err().exit_code(), 3);
}
