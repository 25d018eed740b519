//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! The SVD is a self-contained one-sided (Hestenes) Jacobi iteration. It is
//! slower than bidiagonalisation but reaches full relative accuracy on the
//! small dense matrices used here.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    /// Reassemble `U_k diag(s_k) V_kᵀ` using the leading `k` triplets.
    pub fn truncated(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.s.len());
        let mut out = DMatrix::zeros(self.u.nrows(), self.v.nrows());
        for j in 0..k {
            let sj = self.s[j];
            if sj == 0.0 {
                continue;
            }
            for c in 0..self.v.nrows() {
                let f = sj * self.v[(c, j)];
                if f == 0.0 {
                    continue;
                }
                for r in 0..self.u.nrows() {
                    out[(r, c)] += self.u[(r, j)] * f;
                }
            }
        }
        out
    }

    /// Number of singular values above `tol * s_max` (absolute `tol` when `s_max < 1`).
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        let thresh = tol * smax.max(1.0);
        self.s.iter().filter(|&&x| x > thresh).count()
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    svd_warm(a, None)
}

/// Jacobi SVD started from the short-side basis of a previous decomposition of a
/// nearby matrix; a good start cuts the number of sweeps to one or two.
pub fn svd_warm(a: &DMatrix<f64>, prev: Option<&Svd>) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let start = prev.map(|p| &p.u).filter(|u| u.shape() == (m, m));
        let (u, s, v) = jacobi(&a.transpose(), start);
        return Svd { u: v, s, v: u };
    }
    let start = prev.map(|p| &p.v).filter(|v| v.shape() == (n, n));
    let (u, s, v) = jacobi(a, start);
    Svd { u, s, v }
}

fn jacobi(a: &DMatrix<f64>, start: Option<&DMatrix<f64>>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let (mut u, mut v) = match start {
        Some(v0) => (a * v0, v0.clone()),
        None => (a.clone(), DMatrix::<f64>::identity(n, n)),
    };
    if n == 0 {
        return (u, vec![], v);
    }
    let eps = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let up = u.column(p);
                    let uq = u.column(q);
                    for i in 0..m {
                        alpha += up[i] * up[i];
                        beta += uq[i] * uq[i];
                        gamma += up[i] * uq[i];
                    }
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    for j in 0..n {
        if sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            u.column_mut(j).scale_mut(inv);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap_or(std::cmp::Ordering::Equal));
    let u_sorted = DMatrix::from_fn(m, n, |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    let s_sorted: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    (u_sorted, s_sorted, v_sorted)
}

#[inline]
fn rotate(x: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let rows = x.nrows();
    let data = x.as_mut_slice();
    let (left, right) = data.split_at_mut(q * rows);
    let cp = &mut left[p * rows..(p + 1) * rows];
    let cq = &mut right[..rows];
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Solve a symmetric positive (semi)definite system, adding a tiny ridge when
/// the Cholesky factorisation fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 1e-12 * scale;
    for _ in 0..8 {
        let reg = a + DMatrix::<f64>::identity(n, n) * ridge;
        if let Some(ch) = reg.cholesky() {
            return ch.solve(b);
        }
        ridge *= 100.0;
    }
    DVector::zeros(n)
}

/// Gram–Schmidt (twice) on the columns of `a`; columns that collapse are dropped.
pub fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = a.column(j).into_owned();
        let norm0 = v.norm();
        for _ in 0..2 {
            for q in &out {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-12 * norm0.max(1e-300) && nv > 0.0 {
            out.push(v / nv);
        }
    }
    let k = out.len();
    DMatrix::from_fn(m, k, |r, c| out[c][r])
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(x: &mut [f64], radius: f64) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > radius {
        let f = radius / n;
        x.iter_mut().for_each(|v| *v *= f);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}
