//! Active low-rank estimation from row-wise linear measurements.
//!
//! Each query picks a row `i` and returns `(ψ, ⟨Θ*_i, ψ⟩)` for a random `ψ`.
//! Rows are recovered in rounds: fit a rank-`r` matrix with zero loss on the
//! unknown rows, check every row on fresh samples, and keep the rows that pass.

use crate::error::{Error, Result};
use crate::instances::{LinearMdpSpec, ThetaSet};
use crate::linalg::{dot, norm2, solve_spd, sym_eigen};
use crate::lowdisc::direction_set;
use crate::mdp::{rollout, TabularMdp, TabularPolicy};
use crate::report::fmt_float;
use crate::rng::{self, tag, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Source of row-wise measurements.
pub trait MeasurementOracle: Sync {
    fn dim(&self) -> usize;
    fn num_rows(&self) -> usize;
    /// One measurement of row `row`.
    fn measure(&self, row: usize, rng: &mut Stream) -> (Vec<f64>, f64);
    /// Number of measurements served so far.
    fn queries(&self) -> u64;
}

/// Distribution of synthetic measurement vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiSampler {
    /// Uniform on the sphere of radius `scale`.
    Sphere { scale: f64 },
    /// Uniform over `{±scale·e_i}`.
    SignedAxes { scale: f64 },
    /// Always the same vector.
    PointMass { psi: Vec<f64> },
}

impl PsiSampler {
    pub fn draw(&self, d: usize, rng: &mut Stream) -> Vec<f64> {
        match self {
            PsiSampler::Sphere { scale } => loop {
                let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm2(&g);
                if n > 1e-12 {
                    break g.into_iter().map(|x| x / n * scale).collect();
                }
            },
            PsiSampler::SignedAxes { scale } => {
                let k = rng.gen_range(0..2 * d);
                let mut e = vec![0.0; d];
                e[k / 2] = if k % 2 == 0 { *scale } else { -*scale };
                e
            }
            PsiSampler::PointMass { psi } => psi.clone(),
        }
    }
}

/// Measurements of a fixed matrix against synthetic `ψ`.
pub struct SyntheticOracle {
    pub theta: DMatrix<f64>,
    pub sampler: PsiSampler,
    count: AtomicU64,
}

impl SyntheticOracle {
    pub fn new(theta: DMatrix<f64>, sampler: PsiSampler) -> Self {
        SyntheticOracle {
            theta,
            sampler,
            count: AtomicU64::new(0),
        }
    }
}

impl MeasurementOracle for SyntheticOracle {
    fn dim(&self) -> usize {
        self.theta.ncols()
    }
    fn num_rows(&self) -> usize {
        self.theta.nrows()
    }
    fn measure(&self, row: usize, rng: &mut Stream) -> (Vec<f64>, f64) {
        self.count.fetch_add(1, Ordering::Relaxed);
        let psi = self.sampler.draw(self.dim(), rng);
        let y = (0..psi.len()).map(|j| self.theta[(row, j)] * psi[j]).sum();
        (psi, y)
    }
    fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Measurements from rolling out a fixed policy in user `row`'s MDP and reading
/// the reward at step `h`.
pub struct RolloutOracle<'a> {
    pub mdp: &'a TabularMdp,
    pub spec: &'a LinearMdpSpec,
    pub theta: &'a ThetaSet,
    pub h: usize,
    pub policy: TabularPolicy,
    count: AtomicU64,
}

impl<'a> RolloutOracle<'a> {
    pub fn new(mdp: &'a TabularMdp, spec: &'a LinearMdpSpec, theta: &'a ThetaSet, h: usize, policy: TabularPolicy) -> Self {
        RolloutOracle {
            mdp,
            spec,
            theta,
            h,
            policy,
            count: AtomicU64::new(0),
        }
    }
}

impl MeasurementOracle for RolloutOracle<'_> {
    fn dim(&self) -> usize {
        self.spec.dim
    }
    fn num_rows(&self) -> usize {
        self.theta.num_users
    }
    fn measure(&self, row: usize, rng: &mut Stream) -> (Vec<f64>, f64) {
        self.count.fetch_add(1, Ordering::Relaxed);
        let (s, a) = rollout(self.mdp, &self.policy, rng)[self.h];
        let psi = self.spec.psi_row(self.mdp.pair(s, a)).to_vec();
        let y = dot(self.theta.row(self.h, row), &psi);
        (psi, y)
    }
    fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Per-round sample budget per unknown row:
/// `⌈C[(r|Ī| + dr)/(ζ²ξ²)·log(d/(ζξ)) + log(log N/δ)/(ζ²ξ²)] / |Ī|⌉`.
#[allow(clippy::too_many_arguments)]
pub fn kt_schedule(unknown: usize, d: usize, r: usize, zeta: f64, xi: f64, delta: f64, n: usize, c: f64) -> usize {
    if unknown == 0 {
        return 0;
    }
    let zx2 = (zeta * xi).powi(2);
    let log_n = (n as f64).ln().max(1.0);
    let total = c * ((r * unknown + d * r) as f64 / zx2 * (d as f64 / (zeta * xi)).ln() + (log_n / delta).ln() / zx2);
    (total.max(0.0) / unknown as f64).ceil() as usize
}

/// Sufficient statistics of one row's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub sq: f64,
    pub count: usize,
}

impl RowStats {
    pub fn new(d: usize) -> Self {
        RowStats {
            gram: DMatrix::zeros(d, d),
            cross: DVector::zeros(d),
            sq: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, psi: &[f64], y: f64) {
        let d = psi.len();
        for i in 0..d {
            self.cross[i] += y * psi[i];
            for j in 0..d {
                self.gram[(i, j)] += psi[i] * psi[j];
            }
        }
        self.sq += y * y;
        self.count += 1;
    }

    /// `Σ_k (⟨θ,ψ_k⟩ − y_k)²`.
    pub fn sse(&self, theta: &DVector<f64>) -> f64 {
        (self.sq - 2.0 * theta.dot(&self.cross) + theta.dot(&(&self.gram * theta))).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOpts {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FitOpts {
    fn default() -> Self {
        FitOpts {
            restarts: 5,
            max_iters: 2000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// `|rows| x d`, aligned with the input statistics.
    pub theta: DMatrix<f64>,
    pub loss: f64,
    pub restarts_used: usize,
}

fn total_loss(stats: &[RowStats], theta: &DMatrix<f64>) -> f64 {
    let n: usize = stats.iter().map(|s| s.count).sum();
    let sse: f64 = stats
        .iter()
        .enumerate()
        .map(|(i, s)| s.sse(&theta.row(i).transpose()))
        .sum();
    sse / n.max(1) as f64
}

/// Fits keep iterating until the loss is this fraction of the tolerance, so that
/// accepted rows are accurate well beyond what verification can resolve.
const PRECISION_FACTOR: f64 = 1e-8;

fn als(stats: &[RowStats], mut v: DMatrix<f64>, opts: &FitOpts) -> (DMatrix<f64>, f64) {
    let (n, d, r) = (stats.len(), v.nrows(), v.ncols());
    let mut u = DMatrix::<f64>::zeros(n, r);
    let mut loss = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    for it in 0..opts.max_iters {
        for (i, s) in stats.iter().enumerate() {
            let a = v.transpose() * &s.gram * &v;
            let b = v.transpose() * &s.cross;
            let ui = solve_spd(&a, &b);
            u.row_mut(i).copy_from(&ui.transpose());
        }
        let mut h = DMatrix::<f64>::zeros(d * r, d * r);
        let mut rhs = DVector::<f64>::zeros(d * r);
        for (i, s) in stats.iter().enumerate() {
            for a in 0..r {
                let ua = u[(i, a)];
                if ua == 0.0 {
                    continue;
                }
                for k in 0..d {
                    rhs[a * d + k] += ua * s.cross[k];
                }
                for b in 0..r {
                    let w = ua * u[(i, b)];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        for l in 0..d {
                            h[(a * d + k, b * d + l)] += w * s.gram[(k, l)];
                        }
                    }
                }
            }
        }
        let x = solve_spd(&h, &rhs);
        v = DMatrix::from_column_slice(d, r, x.as_slice());
        let theta = &u * v.transpose();
        loss = total_loss(stats, &theta);
        if loss <= opts.tol * PRECISION_FACTOR {
            return (theta, loss);
        }
        if (it + 1) % 100 == 0 {
            if loss > 0.5 * checkpoint {
                return (theta, loss);
            }
            checkpoint = loss;
        }
        let q = v.clone().qr().q();
        if q.ncols() == r {
            v = q;
        }
    }
    (&u * v.transpose(), loss)
}

fn spectral_start(stats: &[RowStats], d: usize, r: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(d, d);
    for s in stats {
        m += &s.cross * s.cross.transpose();
    }
    let (_, vecs) = sym_eigen(&m);
    DMatrix::from_fn(d, r, |i, c| vecs[(i, d - 1 - c)])
}

/// Best rank-`r` fit over restarts, regardless of the loss reached.
pub fn fit_best(stats: &[RowStats], d: usize, r: usize, opts: &FitOpts, rng: &mut Stream) -> FitOutcome {
    if r == 0 || stats.is_empty() {
        let theta = DMatrix::zeros(stats.len(), d);
        let loss = total_loss(stats, &theta);
        return FitOutcome { theta, loss, restarts_used: 0 };
    }
    let mut best: Option<FitOutcome> = None;
    for restart in 0..opts.restarts.max(1) {
        let v0 = if restart == 0 {
            spectral_start(stats, d, r)
        } else {
            DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let (theta, loss) = als(stats, v0, opts);
        if best.as_ref().map_or(true, |b| loss < b.loss) {
            best = Some(FitOutcome { theta, loss, restarts_used: restart + 1 });
        }
        if loss <= opts.tol {
            break;
        }
    }
    best.expect("at least one restart")
}

/// Rank-`r` matrix with measurement loss at most `opts.tol`, or a fit failure.
pub fn fit_rank_r_zero_loss(stats: &[RowStats], d: usize, r: usize, opts: &FitOpts, rng: &mut Stream) -> Result<FitOutcome> {
    if stats.iter().any(|s| s.count == 0) {
        return Err(Error::Precondition("every row needs at least one measurement".into()));
    }
    let out = fit_best(stats, d, r, opts, rng);
    if out.loss > opts.tol {
        return Err(Error::FitFailure {
            loss: out.loss,
            tol: opts.tol,
            restarts: opts.restarts,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub verified: Vec<usize>,
    pub rejected: Vec<usize>,
    pub samples: u64,
}

/// Keep the rows whose squared error on `k` fresh samples is at most `tol_per_sample · k`.
/// Row `rows[j]` is checked against `candidate.row(j)`.
pub fn verify_rows(
    candidate: &DMatrix<f64>,
    oracle: &dyn MeasurementOracle,
    rows: &[usize],
    k: usize,
    tol_per_sample: f64,
    seed: u64,
    round: u64,
) -> Result<Verification> {
    if k == 0 {
        return Err(Error::Precondition("verification needs at least one fresh sample".into()));
    }
    let ok: Vec<bool> = rows
        .par_iter()
        .enumerate()
        .map(|(j, &row)| {
            let mut rng = rng::stream(seed, &[tag("rowwise"), tag("verify"), round, row as u64]);
            let mut err = 0.0;
            for _ in 0..k {
                let (psi, y) = oracle.measure(row, &mut rng);
                let pred: f64 = (0..psi.len()).map(|c| candidate[(j, c)] * psi[c]).sum();
                err += (pred - y).powi(2);
            }
            err <= tol_per_sample * k as f64
        })
        .collect();
    let (mut verified, mut rejected) = (Vec::new(), Vec::new());
    for (&row, ok) in rows.iter().zip(ok) {
        if ok {
            verified.push(row);
        } else {
            rejected.push(row);
        }
    }
    Ok(Verification {
        verified,
        rejected,
        samples: (rows.len() * k) as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowwiseConfig {
    pub rank: usize,
    pub zeta: f64,
    pub xi: f64,
    pub delta: f64,
    pub c_mult: f64,
    /// Fresh samples per row at verification; defaults to `2d`.
    #[serde(default)]
    pub verify_k: Option<usize>,
    #[serde(default = "default_verify_tol")]
    pub verify_tol: f64,
    #[serde(default)]
    pub fit: FitOpts,
    pub seed: u64,
}

fn default_verify_tol() -> f64 {
    1e-8
}

impl RowwiseConfig {
    pub fn new(rank: usize, zeta: f64, xi: f64, c_mult: f64, seed: u64) -> Self {
        RowwiseConfig {
            rank,
            zeta,
            xi,
            delta: 0.1,
            c_mult,
            verify_k: None,
            verify_tol: default_verify_tol(),
            fit: FitOpts::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: usize,
    pub unknown_rows: usize,
    pub k_t: usize,
    pub fit_loss: f64,
    pub verified: usize,
    pub rejected: usize,
    pub cumulative_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub iteration: usize,
    pub unknown: Vec<usize>,
    pub recovered: Vec<bool>,
    pub log: Vec<IterationLog>,
    pub total_samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub theta_hat: DMatrix<f64>,
    pub state: EstimatorState,
}

/// `2⌈log₂ N⌉ + 2`.
pub fn iteration_cap(n: usize) -> usize {
    2 * (n.max(1) as f64).log2().ceil() as usize + 2
}

/// Recover all rows of the oracle's matrix.
pub fn run_estimator(oracle: &dyn MeasurementOracle, cfg: &RowwiseConfig) -> Result<EstimatorOutput> {
    let (n, d, r) = (oracle.num_rows(), oracle.dim(), cfg.rank);
    if 2 * r > n.min(d) {
        return Err(Error::Precondition(format!("rank {r} exceeds half of min(N={n}, d={d})")));
    }
    if !(cfg.zeta > 0.0 && cfg.xi > 0.0 && cfg.delta > 0.0) {
        return Err(Error::Config("zeta, xi and delta must be positive".into()));
    }
    let verify_k = cfg.verify_k.unwrap_or(2 * d);
    let cap = iteration_cap(n);
    let mut theta_hat = DMatrix::<f64>::zeros(n, d);
    let mut state = EstimatorState {
        iteration: 0,
        unknown: (0..n).collect(),
        recovered: vec![false; n],
        log: Vec::new(),
        total_samples: 0,
    };
    while !state.unknown.is_empty() {
        if state.iteration >= cap {
            let shrink: Vec<String> = state
                .log
                .iter()
                .map(|l| format!("{:.3}", (l.unknown_rows - l.verified) as f64 / l.unknown_rows as f64))
                .collect();
            return Err(Error::NonTermination {
                trajectories: state.total_samples,
                cap: cap as u64,
                detail: format!("{} rows unresolved; per-round shrink factors [{}]", state.unknown.len(), shrink.join(", ")),
            });
        }
        state.iteration += 1;
        let t = state.iteration;
        let rows = state.unknown.clone();
        let k_t = kt_schedule(rows.len(), d, r, cfg.zeta, cfg.xi, cfg.delta, n, cfg.c_mult);
        if k_t == 0 {
            return Err(Error::Precondition("sample schedule gives no measurements".into()));
        }
        let stats: Vec<RowStats> = rows
            .par_iter()
            .map(|&row| {
                let mut rng = rng::stream(cfg.seed, &[tag("rowwise"), tag("fit"), t as u64, row as u64]);
                let mut s = RowStats::new(d);
                for _ in 0..k_t {
                    let (psi, y) = oracle.measure(row, &mut rng);
                    s.add(&psi, y);
                }
                s
            })
            .collect();
        state.total_samples += (k_t * rows.len()) as u64;
        let mut frng = rng::stream(cfg.seed, &[tag("rowwise"), tag("restarts"), t as u64]);
        let fit = fit_best(&stats, d, r, &cfg.fit, &mut frng);
        let check = verify_rows(&fit.theta, oracle, &rows, verify_k, cfg.verify_tol, cfg.seed, t as u64)?;
        state.total_samples += check.samples;
        for &row in &check.verified {
            let j = rows.iter().position(|&x| x == row).expect("row from this round");
            theta_hat.row_mut(row).copy_from(&fit.theta.row(j));
            state.recovered[row] = true;
        }
        state.log.push(IterationLog {
            t,
            unknown_rows: rows.len(),
            k_t,
            fit_loss: fit.loss,
            verified: check.verified.len(),
            rejected: check.rejected.len(),
            cumulative_samples: state.total_samples,
        });
        state.unknown = check.rejected;
    }
    Ok(EstimatorOutput { theta_hat, state })
}

pub fn estimator_csv(log: &[IterationLog]) -> String {
    let mut s = String::from("t,unknown_rows,K_t,fit_loss,verified,rejected,cumulative_samples\n");
    for l in log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            l.t,
            l.unknown_rows,
            l.k_t,
            fmt_float(l.fit_loss),
            l.verified,
            l.rejected,
            l.cumulative_samples
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistConstants {
    pub zeta_hat: f64,
    pub xi_hat: f64,
    /// False when the first-moment constant is numerically zero.
    pub usable: bool,
}

/// Empirical `ζ̂ = √d · min_x mean|⟨ψ,x⟩|` over the direction set and
/// `ξ̂ = 1/√(d λ_max)` of the empirical second moment.
pub fn measure_dist_constants(
    sampler: &mut dyn FnMut() -> Vec<f64>,
    d: usize,
    trials: usize,
    extra_directions: usize,
) -> Result<DistConstants> {
    if trials < 1000 {
        return Err(Error::Precondition("at least 1000 trials are needed".into()));
    }
    let dirs = direction_set(d, extra_directions);
    let mut abs = vec![0.0; dirs.len()];
    let mut second = DMatrix::<f64>::zeros(d, d);
    for _ in 0..trials {
        let psi = sampler();
        for (acc, x) in abs.iter_mut().zip(&dirs) {
            *acc += dot(&psi, x).abs();
        }
        for i in 0..d {
            for j in 0..d {
                second[(i, j)] += psi[i] * psi[j];
            }
        }
    }
    let m = trials as f64;
    let min_abs = abs.iter().fold(f64::INFINITY, |a, &b| a.min(b / m));
    let (vals, _) = sym_eigen(&(second / m));
    let lmax = vals.last().copied().unwrap_or(0.0);
    let zeta_hat = (d as f64).sqrt() * min_abs;
    Ok(DistConstants {
        zeta_hat,
        xi_hat: if lmax > 0.0 { 1.0 / (d as f64 * lmax).sqrt() } else { f64::INFINITY },
        usable: zeta_hat > 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_arithmetic() {
        // independent evaluation of the formula at |I|=100, d=20, r=3, ζ=ξ=½, δ=0.1, N=100, C=1
        let zx2 = 0.0625f64;
        let total = (300.0 + 60.0) / zx2 * (20.0f64 / 0.25).ln() + ((100.0f64).ln() / 0.1).ln() / zx2;
        assert_eq!(kt_schedule(100, 20, 3, 0.5, 0.5, 0.1, 100, 1.0), (total / 100.0).ceil() as usize);
        assert_eq!(kt_schedule(100, 20, 3, 0.5, 0.5, 0.1, 100, 0.0), 0);
    }

    #[test]
    fn single_row_least_squares() {
        let theta = DMatrix::from_row_slice(1, 3, &[0.3, -0.2, 0.9]);
        let oracle = SyntheticOracle::new(theta.clone(), PsiSampler::Sphere { scale: 1.0 });
        let mut rng = rng::stream(3, &[]);
        let mut s = RowStats::new(3);
        for _ in 0..6 {
            let (psi, y) = oracle.measure(0, &mut rng);
            s.add(&psi, y);
        }
        let fit = fit_rank_r_zero_loss(&[s], 3, 1, &FitOpts::default(), &mut rng).unwrap();
        assert!((fit.theta - theta).amax() < 1e-8);
    }

    #[test]
    fn zero_matrix_needs_one_round() {
        let oracle = SyntheticOracle::new(DMatrix::zeros(10, 6), PsiSampler::Sphere { scale: 1.0 });
        let out = run_estimator(&oracle, &RowwiseConfig::new(1, 0.8, 1.0, 0.3, 1)).unwrap();
        assert_eq!(out.state.iteration, 1);
        assert!(out.state.unknown.is_empty());
        assert_eq!(out.theta_hat.amax(), 0.0);
        assert_eq!(out.state.total_samples, oracle.queries());
    }

    #[test]
    fn no_fresh_samples_is_a_precondition_error() {
        let oracle = SyntheticOracle::new(DMatrix::zeros(2, 2), PsiSampler::Sphere { scale: 1.0 });
        let c = DMatrix::zeros(2, 2);
        assert!(matches!(verify_rows(&c, &oracle, &[0, 1], 0, 1e-8, 0, 0), Err(Error::Precondition(_))));
    }
}
