//! Deterministic low-discrepancy point sets (Halton) on the cube, sphere and ball.

use statrs::distribution::{ContinuousCDF, Normal};

const PRIMES: [u64; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// `index`-th Halton point in `[0,1)^dim` (index starts at 1 to skip the origin).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton dimension {dim} unsupported");
    (0..dim).map(|k| radical_inverse(index, PRIMES[k])).collect()
}

/// `count` points on the unit sphere `S^{dim-1}`, mapped from Halton points via the
/// inverse normal CDF.
pub fn sphere_points(count: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = Vec::with_capacity(count);
    let mut idx = 1u64;
    while out.len() < count {
        let h = halton(idx, dim);
        idx += 1;
        let g: Vec<f64> = h
            .iter()
            .map(|&x| normal.inverse_cdf(x.clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            out.push(g.into_iter().map(|v| v / n).collect());
        }
    }
    out
}

/// `count` points in the ball of radius `radius` in `R^dim`, origin first.
pub fn ball_points(count: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    if count == 0 {
        return vec![];
    }
    let mut out = vec![vec![0.0; dim]];
    if dim == 0 {
        return out;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut idx = 1u64;
    while out.len() < count {
        let h = halton(idx, dim + 1);
        idx += 1;
        let g: Vec<f64> = h[..dim]
            .iter()
            .map(|&x| normal.inverse_cdf(x.clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 1e-9 {
            continue;
        }
        let rad = radius * h[dim].powf(1.0 / dim as f64);
        out.push(g.into_iter().map(|v| v / n * rad).collect());
    }
    out
}

/// `count` points of `B(radius) x B(radius)` in `R^dim x R^dim`, origin first.
pub fn ball_pair_points(count: usize, dim: usize, radius: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    if count == 0 {
        return vec![];
    }
    let mut out = vec![(vec![0.0; dim], vec![0.0; dim])];
    if dim == 0 {
        return out;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let to_ball = |h: &[f64]| -> Option<Vec<f64>> {
        let g: Vec<f64> = h[..dim]
            .iter()
            .map(|&x| normal.inverse_cdf(x.clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 1e-9 {
            return None;
        }
        let rad = radius * h[dim].powf(1.0 / dim as f64);
        Some(g.into_iter().map(|v| v / n * rad).collect())
    };
    let mut idx = 1u64;
    while out.len() < count {
        let h = halton(idx, 2 * dim + 2);
        idx += 1;
        if let (Some(u), Some(v)) = (to_ball(&h[..dim + 1]), to_ball(&h[dim + 1..])) {
            out.push((u, v));
        }
    }
    out
}

/// Largest dimension [`ball_pair_points`] supports.
pub const MAX_PAIR_DIM: usize = PRIMES.len() / 2 - 1;

/// The `±e_i` axes followed by `extra` low-discrepancy unit vectors.
pub fn direction_set(dim: usize, extra: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * dim + extra);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = sign;
            out.push(e);
        }
    }
    if dim > 1 {
        out.extend(sphere_points(extra, dim));
    }
    out
}
