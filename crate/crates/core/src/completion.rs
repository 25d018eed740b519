//! Low-rank matrix completion from a mask: fixed-rank alternating least squares
//! (primary) and accelerated singular-value thresholding (cross-check).

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, svd, svd_warm, sym_eigen, Svd};
use crate::rng::{self, tag};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const INTERPOLATION_TOL: f64 = 1e-9;
pub const RECOVERY_TOL: f64 = 1e-6;
const ALS_RIDGE: f64 = 1e-12;

/// Partially observed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; unobserved slots hold 0.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        MaskedMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            mask: vec![false; rows * cols],
        }
    }

    pub fn fully_observed(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        MaskedMatrix {
            rows,
            cols,
            values: m.transpose().as_slice().to_vec(),
            mask: vec![true; rows * cols],
        }
    }

    pub fn observe(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
        self.mask[i * self.cols + j] = true;
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols + j]
    }

    pub fn num_observed(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn zero_filled(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    /// Max-abs error of `x` on the observed entries.
    pub fn residual(&self, x: &DMatrix<f64>) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_observed(i, j) {
                    r = r.max((x[(i, j)] - self.values[i * self.cols + j]).abs());
                }
            }
        }
        r
    }

    fn row_lists(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .filter(|&j| self.is_observed(i, j))
                    .map(|j| (j, self.values[i * self.cols + j]))
                    .collect()
            })
            .collect()
    }

    fn col_lists(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.cols)
            .map(|j| {
                (0..self.rows)
                    .filter(|&i| self.is_observed(i, j))
                    .map(|i| (i, self.values[i * self.cols + j]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub completed: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Local identifiability of the fitted factors from the mask, when checked.
    pub identifiable: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedRankOpts {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FixedRankOpts {
    fn default() -> Self {
        FixedRankOpts {
            max_iters: 3000,
            tol: INTERPOLATION_TOL,
            restarts: 5,
            seed: 0,
        }
    }
}

/// Solve `min_x Σ (y - ⟨x, w⟩)² + ridge ‖x‖²` for each observation list.
fn ls_update(lists: &[Vec<(usize, f64)>], other: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let r = other.ncols();
    for (i, obs) in lists.iter().enumerate() {
        let mut g = DMatrix::<f64>::identity(r, r) * ALS_RIDGE;
        let mut b = DVector::<f64>::zeros(r);
        for &(j, y) in obs {
            for a in 0..r {
                let wa = other[(j, a)];
                b[a] += y * wa;
                for c in 0..r {
                    g[(a, c)] += wa * other[(j, c)];
                }
            }
        }
        let x = solve_spd(&g, &b);
        for a in 0..r {
            out[(i, a)] = x[a];
        }
    }
}

fn factor_residual(m: &MaskedMatrix, rows: &[Vec<(usize, f64)>], u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, obs) in rows.iter().enumerate() {
        for &(j, y) in obs {
            let pred: f64 = (0..u.ncols()).map(|a| u[(i, a)] * v[(j, a)]).sum();
            worst = worst.max((pred - y).abs());
        }
    }
    let _ = m;
    worst
}

/// Rank of the Jacobian of `(U, V) ↦ P_Ω(U Vᵀ)` compared with the dimension of the
/// fixed-rank manifold `r(n₁+n₂) − r²`.
pub fn locally_identifiable(m: &MaskedMatrix, u: &DMatrix<f64>, v: &DMatrix<f64>) -> bool {
    let r = u.ncols();
    let (n1, n2) = (m.rows, m.cols);
    let dim = r * (n1 + n2);
    let target = dim - r * r;
    if r == 0 {
        return true;
    }
    let mut jtj = DMatrix::<f64>::zeros(dim, dim);
    let mut grad = vec![0.0; 2 * r];
    let mut idx = vec![0usize; 2 * r];
    for i in 0..n1 {
        for j in 0..n2 {
            if !m.is_observed(i, j) {
                continue;
            }
            for a in 0..r {
                idx[a] = i * r + a;
                grad[a] = v[(j, a)];
                idx[r + a] = n1 * r + j * r + a;
                grad[r + a] = u[(i, a)];
            }
            for p in 0..2 * r {
                for q in 0..2 * r {
                    jtj[(idx[p], idx[q])] += grad[p] * grad[q];
                }
            }
        }
    }
    let (vals, _) = sym_eigen(&jtj);
    let top = vals.last().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return target == 0;
    }
    let rank = vals.iter().filter(|&&x| x > 1e-10 * top).count();
    rank >= target
}

fn spectral_init(m: &MaskedMatrix, r: usize) -> DMatrix<f64> {
    let frac = (m.num_observed().max(1)) as f64 / (m.rows * m.cols) as f64;
    let d = svd(&(m.zero_filled() / frac));
    DMatrix::from_fn(m.cols, r, |j, a| d.v[(j, a)] * d.s[a].sqrt())
}

fn random_init(n: usize, r: usize, rng: &mut rng::Stream) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// One ALS run; returns `(U, V, residual, iterations)`.
fn als_run(
    m: &MaskedMatrix,
    rows: &[Vec<(usize, f64)>],
    cols: &[Vec<(usize, f64)>],
    mut v: DMatrix<f64>,
    max_iters: usize,
    stop_at: f64,
) -> (DMatrix<f64>, DMatrix<f64>, f64, usize) {
    let r = v.ncols();
    let mut u = DMatrix::zeros(m.rows, r);
    let mut best = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    let mut it = 0;
    let mut res = f64::INFINITY;
    while it < max_iters {
        ls_update(rows, &v, &mut u);
        ls_update(cols, &u, &mut v);
        it += 1;
        res = factor_residual(m, rows, &u, &v);
        best = best.min(res);
        if res <= stop_at {
            break;
        }
        if it % 200 == 0 {
            if best > 0.5 * checkpoint {
                break;
            }
            checkpoint = best;
        }
    }
    (u, v, res, it)
}

/// Fixed-rank completion by multi-restart alternating least squares.
pub fn complete_fixed_rank(m: &MaskedMatrix, r: usize, opts: &FixedRankOpts) -> Result<CompletionResult> {
    if r > m.rows.min(m.cols) {
        return Err(Error::Precondition(format!("rank {r} exceeds min({}, {})", m.rows, m.cols)));
    }
    if r == 0 {
        let z = DMatrix::zeros(m.rows, m.cols);
        let residual = m.residual(&z);
        return Ok(CompletionResult {
            completed: z,
            residual,
            iterations: 0,
            converged: residual <= opts.tol,
            identifiable: Some(true),
        });
    }
    let rows = m.row_lists();
    let cols = m.col_lists();
    let scale = m.values.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let stop_at = (1e-13 * scale).max(1e-300);
    let mut rng = rng::stream(opts.seed, &[tag("completion"), tag("als")]);
    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, f64)> = None;
    let mut iterations = 0;
    for k in 0..opts.restarts.max(1) {
        let v0 = if k == 0 { spectral_init(m, r) } else { random_init(m.cols, r, &mut rng) };
        let (u, v, res, it) = als_run(m, &rows, &cols, v0, opts.max_iters, stop_at);
        iterations += it;
        if best.as_ref().map_or(true, |b| res < b.2) {
            best = Some((u, v, res));
        }
        if res <= opts.tol {
            break;
        }
    }
    let (u, v, residual) = best.expect("at least one restart");
    let identifiable = locally_identifiable(m, &u, &v);
    Ok(CompletionResult {
        completed: &u * v.transpose(),
        residual,
        iterations,
        converged: residual <= opts.tol,
        identifiable: Some(identifiable),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearOpts {
    /// Gradient step (the data term has Lipschitz constant one).
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Final threshold relative to the largest observed magnitude.
    pub mu_min_rel: f64,
    /// Geometric decrease of the threshold per iteration.
    pub mu_decay: f64,
}

impl Default for NuclearOpts {
    fn default() -> Self {
        NuclearOpts {
            step: 1.0,
            max_iters: 20000,
            tol: INTERPOLATION_TOL,
            mu_min_rel: 1e-10,
            mu_decay: 0.9,
        }
    }
}

fn soft_threshold(y: &DMatrix<f64>, tau: f64, prev: Option<&Svd>) -> (DMatrix<f64>, Svd) {
    let d = svd_warm(y, prev);
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for (k, &s) in d.s.iter().enumerate() {
        let t = s - tau;
        if t <= 0.0 {
            break;
        }
        out += d.u.column(k) * d.v.column(k).transpose() * t;
    }
    (out, d)
}

/// Accelerated proximal gradient on `μ‖X‖_* + ½‖P_Ω(X − M)‖²` with continuation
/// `μ → μ_min`, approximating the minimum-nuclear-norm interpolant.
pub fn complete_nuclear(m: &MaskedMatrix, opts: &NuclearOpts) -> Result<CompletionResult> {
    let (n1, n2) = (m.rows, m.cols);
    let scale = m.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if scale == 0.0 {
        return Ok(CompletionResult {
            completed: DMatrix::zeros(n1, n2),
            residual: 0.0,
            iterations: 0,
            converged: true,
            identifiable: None,
        });
    }
    let obs = m.zero_filled();
    let mask = DMatrix::from_row_slice(n1, n2, &m.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let mu_min = opts.mu_min_rel * scale;
    let mut mu = svd(&obs).s.first().copied().unwrap_or(scale) * 0.5;
    let mut x = DMatrix::zeros(n1, n2);
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut prev_svd: Option<Svd> = None;
    let mut last_res = f64::INFINITY;
    let mut rises = 0;
    for it in 1..=opts.max_iters {
        let beta = (t - 1.0) / (1.0 + (1.0 + 4.0 * t * t).sqrt()) * 2.0;
        let y = &x + (&x - &x_prev) * beta;
        let grad = (&y - &obs).component_mul(&mask);
        let (x_new, d) = soft_threshold(&(&y - grad * opts.step), mu * opts.step, prev_svd.as_ref());
        prev_svd = Some(d);
        // gradient-based momentum restart
        let restart = (&y - &x_new).dot(&(&x_new - &x)) > 0.0;
        x_prev = std::mem::replace(&mut x, x_new);
        t = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        mu = (mu * opts.mu_decay).max(mu_min);
        let res = m.residual(&x);
        if !res.is_finite() {
            return Err(Error::Solver("non-finite iterate in nuclear-norm solver".into()));
        }
        // rises below the tolerance are rounding noise
        if res > last_res && res > opts.tol {
            rises += 1;
            if rises >= 10 {
                return Err(Error::Solver(format!(
                    "divergence: residual rose for 10 consecutive iterations (now {res:.3e})"
                )));
            }
        } else {
            rises = 0;
        }
        last_res = res;
        if mu <= mu_min && res <= opts.tol {
            let step_change = (&x - &x_prev).amax();
            if step_change <= opts.tol {
                return Ok(CompletionResult {
                    completed: x,
                    residual: res,
                    iterations: it,
                    converged: true,
                    identifiable: None,
                });
            }
        }
    }
    let residual = m.residual(&x);
    Ok(CompletionResult {
        completed: x,
        residual,
        iterations: opts.max_iters,
        converged: residual <= opts.tol,
        identifiable: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub successes: usize,
    pub trials: usize,
}

impl CurvePoint {
    pub fn fraction(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

/// Rank-`r` truth with factor entries of magnitude in `[0.5, 1.5]` and random signs.
pub fn random_low_rank(n1: usize, n2: usize, r: usize, rng: &mut rng::Stream) -> DMatrix<f64> {
    let mut draw = |n: usize| {
        DMatrix::from_fn(n, r, |_, _| {
            let m: f64 = rng.gen_range(0.5..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
    };
    let u = draw(n1);
    let v = draw(n2);
    u * v.transpose()
}

/// Success fraction of fixed-rank recovery per sampling rate. Each seed uses one
/// random ordering of the entries and observes a prefix of it, so masks are nested
/// across rates.
pub fn recovery_curve(n1: usize, n2: usize, r: usize, rates: &[f64], seeds: usize, base_seed: u64) -> Result<Vec<CurvePoint>> {
    if rates.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Precondition("sampling rates must lie in (0, 1]".into()));
    }
    let outcomes: Vec<Vec<bool>> = (0..seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(base_seed, &[tag("completion"), tag("curve"), k as u64]);
            let truth = random_low_rank(n1, n2, r, &mut rng);
            let mut order: Vec<usize> = (0..n1 * n2).collect();
            order.shuffle(&mut rng);
            rates
                .iter()
                .map(|&p| {
                    let count = ((p * (n1 * n2) as f64).round() as usize).clamp(1, n1 * n2);
                    let mut mm = MaskedMatrix::new(n1, n2);
                    for &e in &order[..count] {
                        mm.observe(e / n2, e % n2, truth[(e / n2, e % n2)]);
                    }
                    let opts = FixedRankOpts {
                        seed: base_seed ^ k as u64,
                        ..FixedRankOpts::default()
                    };
                    match complete_fixed_rank(&mm, r, &opts) {
                        Ok(res) => res.converged && (res.completed - &truth).amax() <= RECOVERY_TOL,
                        Err(_) => false,
                    }
                })
                .collect()
        })
        .collect();
    Ok(rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| CurvePoint {
            rate,
            successes: outcomes.iter().filter(|o| o[i]).count(),
            trials: seeds,
        })
        .collect())
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("rate,successes,trials\n");
    for p in points {
        s.push_str(&format!("{:.16e},{},{}\n", p.rate, p.successes, p.trials));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked(truth: &DMatrix<f64>, rate: f64, seed: u64) -> MaskedMatrix {
        let mut rng = rng::stream(seed, &[tag("test-mask")]);
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

    #[test]
    fn fully_observed_reproduced() {
        let mut rng = rng::stream(1, &[]);
        let truth = random_low_rank(8, 6, 2, &mut rng);
        let res = complete_fixed_rank(&MaskedMatrix::fully_observed(&truth), 2, &FixedRankOpts::default()).unwrap();
        assert!((res.completed - &truth).amax() <= 1e-10);
        assert!(res.converged);
    }

    #[test]
    fn rank_one_recovered_from_forty_percent() {
        let mut rng = rng::stream(2, &[]);
        let truth = random_low_rank(30, 30, 1, &mut rng);
        let m = masked(&truth, 0.4, 3);
        let res = complete_fixed_rank(&m, 1, &FixedRankOpts::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.identifiable, Some(true));
        assert!((res.completed.clone() - &truth).amax() <= RECOVERY_TOL);
        let nuc = complete_nuclear(&m, &NuclearOpts::default()).unwrap();
        assert!(nuc.converged, "nuclear residual {}", nuc.residual);
        assert!((nuc.completed - res.completed).amax() <= 1e-5);
    }

    #[test]
    fn zero_rank_returns_zero() {
        let mut m = MaskedMatrix::new(2, 2);
        m.observe(0, 1, -0.7);
        let res = complete_fixed_rank(&m, 0, &FixedRankOpts::default()).unwrap();
        assert_eq!(res.completed, DMatrix::zeros(2, 2));
        assert_eq!(res.residual, 0.7);
    }

    #[test]
    fn nuclear_on_zero_observations() {
        let mut m = MaskedMatrix::new(3, 4);
        m.observe(1, 1, 0.0);
        let res = complete_nuclear(&m, &NuclearOpts::default()).unwrap();
        assert_eq!(res.completed, DMatrix::zeros(3, 4));
    }

    #[test]
    fn nuclear_fully_determined() {
        let truth = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 0.2, 0.9, 0.1, -0.4]);
        let res = complete_nuclear(&MaskedMatrix::fully_observed(&truth), &NuclearOpts::default()).unwrap();
        assert!((res.completed - truth).amax() < 1e-8);
    }

    #[test]
    fn coherent_matrix_flagged_unidentifiable() {
        let mut truth = DMatrix::zeros(10, 10);
        truth[(0, 0)] = 1.0;
        let m = masked(&truth, 0.3, 5);
        let res = complete_fixed_rank(&m, 1, &FixedRankOpts::default()).unwrap();
        assert_eq!(res.identifiable, Some(false));
    }

    #[test]
    fn curve_is_monotone_and_csv_shaped() {
        let pts = recovery_curve(12, 12, 1, &[0.1, 0.5, 1.0], 6, 9).unwrap();
        assert_eq!(pts[2].successes, 6);
        assert!(pts[0].successes <= pts[1].successes);
        assert!(curve_csv(&pts).starts_with("rate,successes,trials\n"));
    }
}
