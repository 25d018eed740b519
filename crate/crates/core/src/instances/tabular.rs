use super::coherence::{coherence, subspace_coherence, CoherenceReport};
use crate::error::{Error, Result};
use crate::linalg::orthonormal_columns;
use crate::mdp::{RewardFunction, TabularMdp};
use crate::rng::{self, tag, Stream};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

/// Inbound mass multiplier applied to redundant states.
const REDUNDANT_MASS: f64 = 1e-6;
const MAX_REDRAWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularParams {
    pub num_users: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub rank: usize,
    pub seed: u64,
    #[serde(default = "default_coherence_target")]
    pub coherence_target: f64,
    #[serde(default)]
    pub redundant_fraction: f64,
}

fn default_coherence_target() -> f64 {
    2.0
}

impl TabularParams {
    pub fn new(num_users: usize, num_states: usize, num_actions: usize, horizon: usize, rank: usize, seed: u64) -> Self {
        TabularParams {
            num_users,
            num_states,
            num_actions,
            horizon,
            rank,
            seed,
            coherence_target: default_coherence_target(),
            redundant_fraction: 0.0,
        }
    }
}

/// Per-step `N x |S||A|` user reward matrices with their rank-`r` factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrixSet {
    pub num_users: usize,
    pub num_pairs: usize,
    pub rank: usize,
    /// Row-major `N x |S||A|` per step.
    pub matrices: Vec<Vec<f64>>,
    /// Row-major `N x r` per step.
    pub u_factors: Vec<Vec<f64>>,
    /// Row-major `|S||A| x r` per step.
    pub v_factors: Vec<Vec<f64>>,
    pub coherence: Vec<CoherenceReport>,
    #[serde(default)]
    pub redundant_states: Vec<usize>,
}

impl RewardMatrixSet {
    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }

    #[inline]
    pub fn entry(&self, h: usize, user: usize, pair: usize) -> f64 {
        self.matrices[h][user * self.num_pairs + pair]
    }

    pub fn matrix(&self, h: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_users, self.num_pairs, &self.matrices[h])
    }

    pub fn user_reward(&self, user: usize) -> RewardFunction {
        RewardFunction {
            values: self
                .matrices
                .iter()
                .map(|m| m[user * self.num_pairs..(user + 1) * self.num_pairs].to_vec())
                .collect(),
        }
    }
}

fn dirichlet_ones(n: usize, rng: &mut Stream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn renormalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Random dynamics with Dirichlet(1) rows; `redundant` states receive almost no inbound mass.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    redundant: &[usize],
    rng: &mut Stream,
) -> Result<TabularMdp> {
    let damp = |v: &mut Vec<f64>| {
        if !redundant.is_empty() {
            for &s in redundant {
                v[s] *= REDUNDANT_MASS;
            }
            renormalize(v);
        }
    };
    let mut init = dirichlet_ones(num_states, rng);
    damp(&mut init);
    let mut transitions = Vec::with_capacity(horizon.saturating_sub(1));
    for _ in 1..horizon {
        let mut p = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let mut row = dirichlet_ones(num_states, rng);
            damp(&mut row);
            p.extend(row);
        }
        transitions.push(p);
    }
    TabularMdp::new(num_states, num_actions, horizon, init, transitions)
}

/// Raw draws behind one side of the factorization; `λ` blends them.
struct FactorDraw {
    n: usize,
    draws: Vec<Vec<f64>>,
    coords: Vec<usize>,
}

impl FactorDraw {
    fn new(n: usize, k: usize, rng: &mut Stream) -> Self {
        let draws = (0..k).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        FactorDraw {
            n,
            draws,
            coords: idx.into_iter().take(k).collect(),
        }
    }

    /// Orthonormal basis `[1/√n, w_1, …]` with `w_k ⟂ 1`.
    fn basis(&self, lambda: f64) -> DMatrix<f64> {
        let n = self.n;
        let k = self.draws.len();
        let scale = 1.0 / (n as f64).sqrt();
        let raw = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == 0 {
                scale
            } else {
                let c = if self.coords[j - 1] == i { 1.0 } else { 0.0 };
                (1.0 - lambda) * self.draws[j - 1][i] * scale + lambda * c
            }
        });
        orthonormal_columns(&raw)
    }
}

fn blended_coherence(u: &FactorDraw, v: &FactorDraw, lambda: f64) -> Option<f64> {
    let bu = u.basis(lambda);
    let bv = v.basis(lambda);
    let r = u.draws.len() + 1;
    if bu.ncols() != r || bv.ncols() != r {
        return None;
    }
    Some(subspace_coherence(&bu).max(subspace_coherence(&bv)))
}

fn draw_reward_matrix(
    n: usize,
    m: usize,
    r: usize,
    target: f64,
    rng: &mut Stream,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let k = r - 1;
    for _ in 0..MAX_REDRAWS {
        let du = FactorDraw::new(n, k, rng);
        let dv = FactorDraw::new(m, k, rng);
        let (lo_mu, hi_mu) = match (blended_coherence(&du, &dv, 0.0), blended_coherence(&du, &dv, 1.0)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let lambda = if k == 0 || lo_mu >= target {
            0.0
        } else if hi_mu <= target {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                match blended_coherence(&du, &dv, mid) {
                    Some(c) if c < target => lo = mid,
                    _ => hi = mid,
                }
            }
            lo
        };
        let mu = match blended_coherence(&du, &dv, lambda) {
            Some(c) => c,
            None => continue,
        };
        if mu < target / 2.0 || mu > 2.0 * target {
            continue;
        }
        let bu = du.basis(lambda);
        let bv = dv.basis(lambda);
        let mut sigma: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut core = DMatrix::zeros(n, m);
        for j in 0..k {
            core += bu.column(j + 1) * bv.column(j + 1).transpose() * sigma[j];
        }
        let peak = core.amax();
        let scale = if k == 0 {
            0.0
        } else if peak > 0.0 {
            0.5 / peak
        } else {
            continue;
        };
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(m, r);
        u.column_mut(0).fill(1.0);
        v.column_mut(0).fill(0.5);
        for j in 0..k {
            u.set_column(j + 1, &(bu.column(j + 1) * (scale * sigma[j])));
            v.set_column(j + 1, &bv.column(j + 1));
        }
        let mut rmat = &u * v.transpose();
        rmat.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        return Ok((rmat, u, v));
    }
    Err(Error::Generation(format!(
        "coherence target {target} infeasible after {MAX_REDRAWS} redraws"
    )))
}

pub fn check_rank_assumption(r: usize, n: usize, m: usize) -> Result<()> {
    if r == 0 || 2 * r > n.min(m) {
        return Err(Error::Generation(format!(
            "rank r={r} violates the low-rank assumption 1 <= r <= min({n}, {m})/2"
        )));
    }
    Ok(())
}

/// Synthesize dynamics plus rank-`r` rewards of controlled coherence.
pub fn gen_tabular_instance(params: &TabularParams) -> Result<(TabularMdp, RewardMatrixSet)> {
    let (n, s, a, h) = (params.num_users, params.num_states, params.num_actions, params.horizon);
    if n == 0 || s == 0 || a == 0 || h == 0 {
        return Err(Error::Generation("all dimensions must be positive".into()));
    }
    let m = s * a;
    check_rank_assumption(params.rank, n, m)?;
    if !(params.coherence_target >= 1.0) {
        return Err(Error::Generation("coherence target must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&params.redundant_fraction) {
        return Err(Error::Generation("redundant_fraction must lie in [0,1)".into()));
    }
    let mut drng = rng::stream(params.seed, &[tag("instances"), tag("tabular"), tag("dynamics")]);
    let k_red = (params.redundant_fraction * s as f64).floor() as usize;
    let mut states: Vec<usize> = (0..s).collect();
    states.shuffle(&mut drng);
    let mut redundant: Vec<usize> = states.into_iter().take(k_red).collect();
    redundant.sort_unstable();
    let mdp = random_mdp(s, a, h, &redundant, &mut drng)?;

    let mut rs = RewardMatrixSet {
        num_users: n,
        num_pairs: m,
        rank: params.rank,
        matrices: Vec::with_capacity(h),
        u_factors: Vec::with_capacity(h),
        v_factors: Vec::with_capacity(h),
        coherence: Vec::with_capacity(h),
        redundant_states: redundant,
    };
    for step in 0..h {
        let mut rrng = rng::stream(params.seed, &[tag("instances"), tag("tabular"), tag("rewards"), step as u64]);
        let (rm, u, v) = draw_reward_matrix(n, m, params.rank, params.coherence_target, &mut rrng)?;
        rs.coherence.push(coherence(&rm, params.rank)?);
        rs.matrices.push(rm.transpose().as_slice().to_vec());
        rs.u_factors.push(u.transpose().as_slice().to_vec());
        rs.v_factors.push(v.transpose().as_slice().to_vec());
    }
    Ok((mdp, rs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;

    #[test]
    fn rank_one_is_flat_half() {
        let p = TabularParams::new(10, 3, 2, 2, 1, 4);
        let (_, rs) = gen_tabular_instance(&p).unwrap();
        assert!(rs.matrices.iter().flatten().all(|&x| x == 0.5));
        assert!((rs.coherence[0].mu0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn desk_instance_has_exact_rank() {
        let p = TabularParams::new(64, 8, 4, 3, 2, 1);
        let (mdp, rs) = gen_tabular_instance(&p).unwrap();
        assert_eq!(mdp.num_pairs(), 32);
        for h in 0..3 {
            let d = svd(&rs.matrix(h));
            assert!(d.s[1] > 1e-3);
            assert!(d.s[2] < 1e-10, "third singular value {}", d.s[2]);
            let c = rs.coherence[h].mu0;
            assert!((1.0..=4.0).contains(&c), "mu0 {c}");
        }
        assert!(rs.matrices.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn factors_reproduce_matrix() {
        let p = TabularParams::new(12, 4, 2, 2, 3, 9);
        let (_, rs) = gen_tabular_instance(&p).unwrap();
        for h in 0..2 {
            let u = DMatrix::from_row_slice(12, 3, &rs.u_factors[h]);
            let v = DMatrix::from_row_slice(8, 3, &rs.v_factors[h]);
            assert!((u * v.transpose() - rs.matrix(h)).amax() < 1e-12);
        }
    }

    #[test]
    fn oversized_rank_is_rejected() {
        let p = TabularParams::new(10, 2, 2, 1, 3, 0);
        assert!(matches!(gen_tabular_instance(&p), Err(Error::Generation(_))));
    }

    #[test]
    fn generation_is_pure() {
        let p = TabularParams::new(16, 3, 3, 2, 2, 77);
        assert_eq!(gen_tabular_instance(&p).unwrap(), gen_tabular_instance(&p).unwrap());
    }

    #[test]
    fn redundant_states_are_hard_to_reach() {
        let mut p = TabularParams::new(16, 6, 2, 2, 2, 5);
        p.redundant_fraction = 0.34;
        let (mdp, rs) = gen_tabular_instance(&p).unwrap();
        assert_eq!(rs.redundant_states.len(), 2);
        for &s in &rs.redundant_states {
            assert!(mdp.init_dist()[s] < 1e-5);
        }
    }
}
