//! Random instance generators and small independent oracles shared by the
//! integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdpack::linalg::SymMatrix;
use sdpack::model::PackingProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_like(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `F Fᵀ` with `F` of the given width.
pub fn psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> SymMatrix {
    let f = gaussian_like(rng, n, rank);
    SymMatrix::new(&f * f.transpose()).unwrap()
}

/// Orthonormal `n × n` matrix from the QR factor of a random matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian_like(rng, n, n).qr().q()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub fn rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    let top = e.amax();
    e.iter().filter(|&&v| v > rel * top).count()
}

/// Feasible, bounded packing instance with `rank C = r`. `C` is built inside
/// `Im Σ M_i`, so range inclusion holds by construction.
pub fn packing(rng: &mut ChaCha8Rng, n: usize, l: usize, r: usize) -> PackingProblem {
    loop {
        let ms: Vec<SymMatrix> = (0..l).map(|_| { let k = rng.random_range(1..=n); psd(rng, n, k) }).collect();
        let sum = ms.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m.as_matrix());
        let e = SymmetricEigen::new(sum);
        let top = e.eigenvalues.amax();
        let range: Vec<usize> = (0..n).filter(|&k| e.eigenvalues[k] > 1e-6 * top).collect();
        if range.len() < r {
            continue;
        }
        let u = DMatrix::from_fn(n, range.len(), |i, j| e.eigenvectors[(i, range[j])]);
        let f = &u * gaussian_like(rng, range.len(), r);
        let c = SymMatrix::new(&f * f.transpose()).unwrap();
        let b: Vec<f64> = (0..l).map(|_| rng.random_range(0.5..2.0)).collect();
        return PackingProblem::from_parts(c, ms, b).unwrap();
    }
}

/// `max_θ xᵀCx · min_i b_i / xᵀM_ix` over `x = (cos θ, sin θ)` on a grid of
/// `points` angles in `[0, π)`: the best rank-one value for `n = 2`.
/// Angles where every `xᵀM_ix` is at roundoff level are skipped.
pub fn rank_one_brute_force(p: &PackingProblem, points: usize) -> f64 {
    assert_eq!(p.n(), 2);
    let mut best = 0.0_f64;
    for k in 0..points {
        let th = std::f64::consts::PI * k as f64 / points as f64;
        let x = DVector::from_vec(vec![th.cos(), th.sin()]);
        let gain = (x.transpose() * p.c().as_matrix() * &x)[0];
        let scale = p
            .constraints()
            .iter()
            .map(|c| {
                // Near the kernel of M_i both xᵀCx and xᵀM_ix vanish on a
                // bounded instance; their ratio there is roundoff (xᵀM_ix
                // carries an absolute error near 1e-17 tr M_i).
                let q = (x.transpose() * c.m.as_matrix() * &x)[0];
                if q > 1e-9 * c.m.trace() { c.b / q } else { f64::INFINITY }
            })
            .fold(f64::INFINITY, f64::min);
        if scale.is_finite() {
            best = best.max(gain * scale);
        }
    }
    best
}

/// `cᵀ M⁻¹ c` for a 2 × 2 matrix, `+∞` when `c` is not in the range.
pub fn variance_2x2(m: &DMatrix<f64>, c: &[f64; 2]) -> f64 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.amax().max(1e-300);
    if det.abs() > 1e-12 * scale * scale {
        let inv = DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]) / det;
        let cv = DVector::from_column_slice(c);
        return (cv.transpose() * inv * &cv)[0];
    }
    // Rank one: M = σ vvᵀ, and c must be parallel to v.
    let tr = m.trace();
    if tr <= 0.0 {
        return f64::INFINITY;
    }
    let v = if m[(0, 0)] >= m[(1, 1)] { [m[(0, 0)], m[(1, 0)]] } else { [m[(0, 1)], m[(1, 1)]] };
    let vn = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let u = [v[0] / vn, v[1] / vn];
    let along = c[0] * u[0] + c[1] * u[1];
    let off = ((c[0] - along * u[0]).powi(2) + (c[1] - along * u[1]).powi(2)).sqrt();
    if off > 1e-9 * (c[0].abs() + c[1].abs()) {
        return f64::INFINITY;
    }
    along * along / tr
}
