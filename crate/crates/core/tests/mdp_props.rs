use collabrl::instances::random_mdp;
use collabrl::mdp::*;
use collabrl::rng;
use proptest::prelude::*;
use rand::Rng;

fn random_policy(mdp: &TabularMdp, rng: &mut rng::Stream) -> TabularPolicy {
    let a_n = mdp.num_actions();
    let kernels = (0..mdp.horizon())
        .map(|_| {
            let mut k: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            for row in k.chunks_mut(a_n) {
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= z);
            }
            k
        })
        .collect();
    TabularPolicy::new(mdp, kernels).unwrap()
}

fn random_reward(mdp: &TabularMdp, rng: &mut rng::Stream) -> RewardFunction {
    RewardFunction::new((0..mdp.horizon()).map(|_| (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).collect()).unwrap()
}

/// Backward policy evaluation, written independently of the occupancy code.
fn evaluate(mdp: &TabularMdp, r: &RewardFunction, pi: &TabularPolicy) -> f64 {
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; s_n];
    for h in (0..mdp.horizon()).rev() {
        let mut nv = vec![0.0; s_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let mut q = r.values[h][s * a_n + a];
                if h + 1 < mdp.horizon() {
                    q += mdp.next_dist(h, s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
                }
                nv[s] += pi.dist(h, s, a_n)[a] * q;
            }
        }
        v = nv;
    }
    mdp.init_dist().iter().zip(&v).map(|(p, x)| p * x).sum()
}

fn instance(s: usize, a: usize, h: usize, seed: u64) -> (TabularMdp, RewardFunction, TabularPolicy) {
    let mut g = rng::stream(seed, &[11]);
    let mdp = random_mdp(s, a, h, &[], &mut g).unwrap();
    let r = random_reward(&mdp, &mut g);
    let pi = random_policy(&mdp, &mut g);
    (mdp, r, pi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_equals_occupancy_inner_product(s in 1usize..6, a in 1usize..4, h in 1usize..5, seed in any::<u64>()) {
        let (mdp, r, pi) = instance(s, a, h, seed);
        let occ = occupancy(&mdp, &pi).unwrap();
        let inner: f64 = occ.dists.iter().zip(&r.values).map(|(d, v)| d.iter().zip(v).map(|(x, y)| x * y).sum::<f64>()).sum();
        let v = exact_value(&mdp, &r, &pi).unwrap();
        prop_assert!((v - inner).abs() <= 1e-10);
        prop_assert!((v - evaluate(&mdp, &r, &pi)).abs() <= 1e-10);
    }

    #[test]
    fn occupancies_are_distributions(s in 1usize..6, a in 1usize..4, h in 1usize..5, seed in any::<u64>()) {
        let (mdp, _, pi) = instance(s, a, h, seed);
        let occ = occupancy(&mdp, &pi).unwrap();
        for d in &occ.dists {
            prop_assert!(d.iter().all(|&x| x >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn optimum_dominates_random_policies(s in 1usize..5, a in 1usize..4, h in 1usize..4, seed in any::<u64>()) {
        let (mdp, r, _) = instance(s, a, h, seed);
        let (best_pi, best) = optimal_policy(&mdp, &r).unwrap();
        prop_assert!((evaluate(&mdp, &r, &best_pi) - best).abs() <= 1e-10);
        let mut g = rng::stream(seed, &[12]);
        for _ in 0..100 {
            let pi = random_policy(&mdp, &mut g);
            prop_assert!(exact_value(&mdp, &r, &pi).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn fixed_stream_reproduces_trajectories(s in 1usize..6, a in 1usize..4, h in 1usize..5, seed in any::<u64>()) {
        let (mdp, r, pi) = instance(s, a, h, seed);
        let t1 = sample_trajectory(&mdp, &r, &pi, &mut rng::stream(seed, &[13])).unwrap();
        let t2 = sample_trajectory(&mdp, &r, &pi, &mut rng::stream(seed, &[13])).unwrap();
        prop_assert_eq!(t1, t2);
    }
}

#[test]
fn monte_carlo_matches_exact_value() {
    let (mdp, r, pi) = instance(4, 3, 3, 99);
    let mut g = rng::stream(99, &[14]);
    let n = 200_000;
    let total: f64 = (0..n)
        .map(|_| sample_trajectory(&mdp, &r, &pi, &mut g).unwrap().steps.iter().map(|s| s.reward).sum::<f64>())
        .sum();
    let mc = total / n as f64;
    // returns lie in [0, 3]; 5 standard errors of the worst case
    assert!((mc - exact_value(&mdp, &r, &pi).unwrap()).abs() < 5.0 * 1.5 / (n as f64).sqrt());
}

#[test]
fn mdp_json_round_trip() {
    let (mdp, _, _) = instance(3, 2, 3, 5);
    let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
    assert_eq!(back, mdp);
}
