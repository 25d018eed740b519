use super::tabular::check_rank_assumption;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2, orthonormal_columns};
use crate::mdp::{RewardFunction, TabularMdp, TabularPolicy};
use crate::rng::{self, tag, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// How embeddings are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearDesign {
    /// `ψ` rows spread inside a cone around a fixed axis.
    #[default]
    Cone,
    /// `d = |A|`, `φ(s,a) = ψ(s,a) = e_a`.
    Coordinate,
    /// Coordinate layout with the last action's `φ` folded onto `e_{d-2}`, so no
    /// feature ever points along `e_{d-1}`.
    Deficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub num_users: usize,
    pub dim: usize,
    pub horizon: usize,
    pub rank: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    #[serde(default)]
    pub design: LinearDesign,
    /// Weight of the random simplex part of `φ`.
    #[serde(default = "default_phi_mix")]
    pub phi_mix: f64,
    /// Norm of every `ψ` row.
    #[serde(default = "default_psi_radius")]
    pub psi_radius: f64,
    /// Half-angle of the `ψ` cone in radians.
    #[serde(default = "default_cone_angle")]
    pub cone_angle: f64,
}

fn default_phi_mix() -> f64 {
    0.3
}
fn default_psi_radius() -> f64 {
    1.0
}
fn default_cone_angle() -> f64 {
    std::f64::consts::FRAC_PI_4
}

impl LinearParams {
    pub fn new(num_users: usize, dim: usize, horizon: usize, rank: usize, num_states: usize, num_actions: usize, seed: u64) -> Self {
        LinearParams {
            num_users,
            dim,
            horizon,
            rank,
            num_states,
            num_actions,
            seed,
            design: LinearDesign::Cone,
            phi_mix: default_phi_mix(),
            psi_radius: default_psi_radius(),
            cone_angle: default_cone_angle(),
        }
    }
}

/// Embeddings and measures of a finite-state linear MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMdpSpec {
    pub dim: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Row-major `|S||A| x d`.
    pub phi: Vec<f64>,
    /// Row-major `|S||A| x d`.
    pub psi: Vec<f64>,
    /// Per transition step, row-major `d x |S|`.
    pub mu: Vec<Vec<f64>>,
    pub c_mu: f64,
}

impl LinearMdpSpec {
    #[inline]
    pub fn phi_row(&self, pair: usize) -> &[f64] {
        &self.phi[pair * self.dim..(pair + 1) * self.dim]
    }
    #[inline]
    pub fn psi_row(&self, pair: usize) -> &[f64] {
        &self.psi[pair * self.dim..(pair + 1) * self.dim]
    }
    #[inline]
    pub fn mu_row(&self, h: usize, i: usize) -> &[f64] {
        &self.mu[h][i * self.num_states..(i + 1) * self.num_states]
    }
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// `Σ_i μ_ih(s') φ_i(s,a)` as a row-major `(|S||A|) x |S|` kernel.
    pub fn reconstruct(&self, h: usize) -> Vec<f64> {
        let s_n = self.num_states;
        let mut p = vec![0.0; self.num_pairs() * s_n];
        for pair in 0..self.num_pairs() {
            let phi = self.phi_row(pair);
            for (i, &w) in phi.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (x, &m) in p[pair * s_n..(pair + 1) * s_n].iter_mut().zip(self.mu_row(h, i)) {
                    *x += w * m;
                }
            }
        }
        p
    }

    /// Largest `Σ_{s'} |P_h(s'|s,a) − Σ_i μ_ih(s') φ_i(s,a)|` over all steps and pairs.
    pub fn consistency_error(&self, mdp: &TabularMdp) -> f64 {
        let s_n = self.num_states;
        let mut worst: f64 = 0.0;
        for h in 0..self.horizon.saturating_sub(1) {
            let rec = self.reconstruct(h);
            for (row_r, row_t) in rec.chunks(s_n).zip(mdp.transitions()[h].chunks(s_n)) {
                let e: f64 = row_r.iter().zip(row_t).map(|(a, b)| (a - b).abs()).sum();
                worst = worst.max(e);
            }
        }
        worst
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        for pair in 0..self.num_pairs() {
            if norm1(self.phi_row(pair)) > 1.0 + 1e-12 {
                return Err(Error::Instance(format!("phi row {pair} has l1 norm above 1")));
            }
            if norm2(self.psi_row(pair)) > 1.0 + 1e-12 {
                return Err(Error::Instance(format!("psi row {pair} has l2 norm above 1")));
            }
        }
        let err = self.consistency_error(mdp);
        if err >= 1e-10 {
            return Err(Error::Instance(format!("transition reconstruction error {err:.3e}")));
        }
        Ok(())
    }

    /// `‖Σ_s μ_ih(s) Σ_a φ(s,a) π(a|s)‖₁` for each `i`, the quantity bounded by one.
    pub fn mu_phi_mass(&self, h: usize, policy: &TabularPolicy, step_of_policy: usize) -> Vec<f64> {
        let a_n = self.num_actions;
        (0..self.dim)
            .map(|i| {
                let mut acc = vec![0.0; self.dim];
                for (s, &m) in self.mu_row(h, i).iter().enumerate() {
                    for (a, &pa) in policy.dist(step_of_policy, s, a_n).iter().enumerate() {
                        for (x, &f) in acc.iter_mut().zip(self.phi_row(s * a_n + a)) {
                            *x += m * pa * f;
                        }
                    }
                }
                norm1(&acc)
            })
            .collect()
    }
}

/// Per-step `N x d` reward parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub num_users: usize,
    pub dim: usize,
    pub rank: usize,
    /// Row-major `N x d` per step.
    pub thetas: Vec<Vec<f64>>,
}

impl ThetaSet {
    pub fn row(&self, h: usize, user: usize) -> &[f64] {
        &self.thetas[h][user * self.dim..(user + 1) * self.dim]
    }

    pub fn matrix(&self, h: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_users, self.dim, &self.thetas[h])
    }

    /// `R_hu(s,a) = ⟨θ_hu, ψ(s,a)⟩` without clipping.
    pub fn raw_rewards(&self, spec: &LinearMdpSpec, user: usize) -> Vec<Vec<f64>> {
        (0..self.thetas.len())
            .map(|h| {
                let th = self.row(h, user);
                (0..spec.num_pairs()).map(|p| dot(th, spec.psi_row(p))).collect()
            })
            .collect()
    }

    pub fn user_reward(&self, spec: &LinearMdpSpec, user: usize) -> Result<RewardFunction> {
        RewardFunction::new(self.raw_rewards(spec, user))
    }
}

fn dirichlet_ones(n: usize, rng: &mut Stream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn gaussian_unit(d: usize, rng: &mut Stream) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&g);
        if n > 1e-9 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

fn build_mdp(spec: &LinearMdpSpec, rng: &mut Stream) -> Result<TabularMdp> {
    let init = dirichlet_ones(spec.num_states, rng);
    let transitions = (0..spec.horizon.saturating_sub(1)).map(|h| spec.reconstruct(h)).collect();
    TabularMdp::new(spec.num_states, spec.num_actions, spec.horizon, init, transitions)
}

fn random_measures(d: usize, s: usize, horizon: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    (0..horizon.saturating_sub(1))
        .map(|_| (0..d).flat_map(|_| dirichlet_ones(s, rng)).collect())
        .collect()
}

/// Rank-`r` `Θ` whose rewards against `psi` land in `[0,1]`: a shared base row with
/// `⟨θ_0, ψ⟩ = ½` plus a scaled rank-`(r-1)` term.
fn draw_theta(
    n: usize,
    d: usize,
    r: usize,
    base: &[f64],
    psi: &[f64],
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let k = r - 1;
    let pairs = psi.len() / d;
    let mut theta = DMatrix::from_fn(n, d, |_, j| base[j]);
    if k == 0 {
        return Ok(theta.transpose().as_slice().to_vec());
    }
    let ones = DVector::from_element(n, 1.0);
    let mut a_raw = DMatrix::zeros(n, k + 1);
    a_raw.set_column(0, &ones);
    for j in 0..k {
        let col: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        a_raw.set_column(j + 1, &DVector::from_vec(col));
    }
    let a = orthonormal_columns(&a_raw);
    let mut b_raw = DMatrix::zeros(d, k + 1);
    b_raw.set_column(0, &DVector::from_column_slice(base));
    for j in 0..k {
        b_raw.set_column(j + 1, &DVector::from_vec(gaussian_unit(d, rng)));
    }
    let b = orthonormal_columns(&b_raw);
    if a.ncols() != k + 1 || b.ncols() != k + 1 {
        return Err(Error::Generation("degenerate factor draw".into()));
    }
    let mut low = DMatrix::zeros(n, d);
    for j in 0..k {
        let sigma: f64 = rng.gen_range(0.5..1.5);
        low += a.column(j + 1) * b.column(j + 1).transpose() * sigma;
    }
    let mut peak: f64 = 0.0;
    for u in 0..n {
        for p in 0..pairs {
            let v: f64 = (0..d).map(|j| low[(u, j)] * psi[p * d + j]).sum();
            peak = peak.max(v.abs());
        }
    }
    if peak <= 1e-12 {
        return Err(Error::Generation("reward-range normalization infeasible: low-rank part invisible to psi".into()));
    }
    theta += low * (0.5 * (1.0 - 1e-9) / peak);
    Ok(theta.transpose().as_slice().to_vec())
}

fn check_linear(params: &LinearParams) -> Result<()> {
    let LinearParams { num_users: n, dim: d, horizon: h, num_states: s, num_actions: a, .. } = *params;
    if n == 0 || d == 0 || h == 0 || s == 0 || a == 0 {
        return Err(Error::Generation("all dimensions must be positive".into()));
    }
    check_rank_assumption(params.rank, n, d)?;
    if d > s * a {
        return Err(Error::Generation(format!("d={d} exceeds |S||A|={}", s * a)));
    }
    Ok(())
}

/// Synthesize a finite-state linear MDP with rank-`r` reward parameters.
pub fn gen_linear_instance(params: &LinearParams) -> Result<(TabularMdp, LinearMdpSpec, ThetaSet)> {
    check_linear(params)?;
    let (n, d, h_n, s_n, a_n) = (params.num_users, params.dim, params.horizon, params.num_states, params.num_actions);
    let mut rng = rng::stream(params.seed, &[tag("instances"), tag("linear")]);
    let pairs = s_n * a_n;
    let (phi, psi, base) = match params.design {
        LinearDesign::Coordinate | LinearDesign::Deficient => {
            if d != a_n {
                return Err(Error::Generation("coordinate design needs d = |A|".into()));
            }
            let mut e = vec![0.0; pairs * d];
            for p in 0..pairs {
                e[p * d + p % a_n] = 1.0;
            }
            let mut phi = e.clone();
            if params.design == LinearDesign::Deficient {
                if d < 2 {
                    return Err(Error::Generation("deficient design needs d >= 2".into()));
                }
                for p in (0..pairs).filter(|p| p % a_n == d - 1) {
                    phi[p * d + d - 1] = 0.0;
                    phi[p * d + d - 2] = 1.0;
                }
            }
            (phi, e, vec![0.5; d])
        }
        LinearDesign::Cone => {
            let w = params.phi_mix.clamp(0.0, 1.0);
            let mut phi = vec![0.0; pairs * d];
            for p in 0..pairs {
                let mix = dirichlet_ones(d, &mut rng);
                for i in 0..d {
                    phi[p * d + i] = w * mix[i];
                }
                phi[p * d + p % d] += 1.0 - w;
            }
            let axis = gaussian_unit(d, &mut rng);
            let (rho, alpha) = (params.psi_radius.clamp(0.0, 1.0), params.cone_angle);
            if rho <= 0.0 || alpha.cos() <= 1e-6 {
                return Err(Error::Generation("psi cone degenerate".into()));
            }
            let mut psi = vec![0.0; pairs * d];
            for p in 0..pairs {
                let z = if d == 1 {
                    vec![0.0]
                } else {
                    loop {
                        let mut z = gaussian_unit(d, &mut rng);
                        let c = dot(&z, &axis);
                        z.iter_mut().zip(&axis).for_each(|(x, m)| *x -= c * m);
                        let nz = norm2(&z);
                        if nz > 1e-6 {
                            break z.into_iter().map(|x| x / nz).collect::<Vec<_>>();
                        }
                    }
                };
                for i in 0..d {
                    psi[p * d + i] = rho * (alpha.cos() * axis[i] + alpha.sin() * z[i]);
                }
            }
            let beta = 0.5 / (rho * alpha.cos());
            let base = axis.iter().map(|m| beta * m).collect();
            (phi, psi, base)
        }
    };
    let spec = LinearMdpSpec {
        dim: d,
        num_states: s_n,
        num_actions: a_n,
        horizon: h_n,
        phi,
        psi,
        mu: random_measures(d, s_n, h_n, &mut rng),
        c_mu: 1.0,
    };
    let mdp = build_mdp(&spec, &mut rng)?;
    spec.validate(&mdp)?;
    let thetas = (0..h_n)
        .map(|h| {
            let mut trng = rng::stream(params.seed, &[tag("instances"), tag("theta"), h as u64]);
            draw_theta(n, d, params.rank, &base, &spec.psi, &mut trng)
        })
        .collect::<Result<Vec<_>>>()?;
    let theta = ThetaSet {
        num_users: n,
        dim: d,
        rank: params.rank,
        thetas,
    };
    Ok((mdp, spec, theta))
}

/// Instance where the uniform policy makes `ψ(S_h, A_h)` uniform over `{±e_i}` at
/// every step: `|A| = 2d` and `ψ(s, a) = ±e_{(a/2 + shift_s) mod d}`.
/// Rewards are identically zero.
pub fn gen_planted_instance(
    num_users: usize,
    dim: usize,
    num_states: usize,
    horizon: usize,
    seed: u64,
) -> Result<(TabularMdp, LinearMdpSpec, ThetaSet)> {
    if dim == 0 || num_states == 0 || horizon == 0 || num_users == 0 {
        return Err(Error::Generation("all dimensions must be positive".into()));
    }
    let a_n = 2 * dim;
    let pairs = num_states * a_n;
    let mut rng = rng::stream(seed, &[tag("instances"), tag("planted")]);
    let mut phi = vec![0.0; pairs * dim];
    let mut psi = vec![0.0; pairs * dim];
    let w = default_phi_mix();
    for s in 0..num_states {
        let shift = rng.gen_range(0..dim);
        for a in 0..a_n {
            let p = s * a_n + a;
            let mix = dirichlet_ones(dim, &mut rng);
            for i in 0..dim {
                phi[p * dim + i] = w * mix[i];
            }
            phi[p * dim + (a + s) % dim] += 1.0 - w;
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            psi[p * dim + (a / 2 + shift) % dim] = sign;
        }
    }
    let spec = LinearMdpSpec {
        dim,
        num_states,
        num_actions: a_n,
        horizon,
        phi,
        psi,
        mu: random_measures(dim, num_states, horizon, &mut rng),
        c_mu: 1.0,
    };
    let mdp = build_mdp(&spec, &mut rng)?;
    spec.validate(&mdp)?;
    let theta = ThetaSet {
        num_users,
        dim,
        rank: 0,
        thetas: vec![vec![0.0; num_users * dim]; horizon],
    };
    Ok((mdp, spec, theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_design_reads_theta_by_action() {
        let mut p = LinearParams::new(8, 3, 2, 1, 4, 3, 2);
        p.design = LinearDesign::Coordinate;
        let (mdp, spec, theta) = gen_linear_instance(&p).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                assert_eq!(spec.psi_row(mdp.pair(s, a))[a], 1.0);
                let r = theta.user_reward(&spec, 5).unwrap();
                assert_eq!(r.values[0][mdp.pair(s, a)], theta.row(0, 5)[a]);
            }
        }
        // transitions depend only on the action
        let p0 = mdp.next_dist(0, 0, 1).to_vec();
        assert_eq!(p0, mdp.next_dist(0, 3, 1).to_vec());
    }

    #[test]
    fn deficient_design_never_reaches_last_axis() {
        let mut p = LinearParams::new(8, 4, 2, 1, 3, 4, 2);
        p.design = LinearDesign::Deficient;
        let (mdp, spec, _) = gen_linear_instance(&p).unwrap();
        assert!(spec.consistency_error(&mdp) < 1e-10);
        assert!((0..spec.num_pairs()).all(|q| spec.phi_row(q)[3] == 0.0));
        assert_eq!(spec.psi_row(3)[3], 1.0);
    }

    #[test]
    fn cone_instance_is_consistent() {
        let p = LinearParams::new(60, 8, 2, 2, 16, 4, 3);
        let (mdp, spec, theta) = gen_linear_instance(&p).unwrap();
        assert!(spec.consistency_error(&mdp) < 1e-10);
        for u in 0..60 {
            for h in 0..2 {
                assert!(norm2(theta.row(h, u)) <= (8f64).sqrt());
            }
            assert!(theta.user_reward(&spec, u).is_ok());
        }
        let rank = crate::linalg::svd(&theta.matrix(0)).rank(1e-10);
        assert_eq!(rank, 2);
    }

    #[test]
    fn planted_psi_is_signed_axes() {
        let (_, spec, _) = gen_planted_instance(4, 3, 5, 2, 1).unwrap();
        for p in 0..spec.num_pairs() {
            let row = spec.psi_row(p);
            assert_eq!(row.iter().filter(|x| **x != 0.0).count(), 1);
            assert_eq!(norm1(row), 1.0);
        }
    }

    #[test]
    fn rank_one_theta_is_shared() {
        let p = LinearParams::new(6, 4, 2, 1, 5, 3, 8);
        let (_, _, theta) = gen_linear_instance(&p).unwrap();
        for u in 1..6 {
            assert_eq!(theta.row(0, u), theta.row(0, 0));
        }
    }
}
