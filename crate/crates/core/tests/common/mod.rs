//! Independent oracles shared by the integration tests. Linear algebra here
//! goes through nalgebra, never through the crate's own kernels.
#![allow(dead_code)]

use std::path::PathBuf;

use dldr::SubspaceBasis;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn basis_matrix(basis: &SubspaceBasis) -> DMatrix<f64> {
    DMatrix::from_fn(basis.n(), basis.dim(), |r, c| basis.column(c)[r])
}

/// Orthonormal columns spanning the columns of `m` (thin QR).
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Principal angles (radians, descending) between the spans of two
/// orthonormal column sets, from the singular values of `(I - A A^T) B`.
/// The sine form stays accurate for tiny angles.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let residual = b - a * (a.transpose() * b);
    let mut s: Vec<f64> = residual.singular_values().iter().map(|x| x.min(1.0).asin()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles(a, b).first().copied().unwrap_or(0.0)
}

/// Top-`k` eigenvectors of the explicit `n x n` covariance of the samples.
pub fn covariance_pca(samples: &[Vec<f64>], k: usize) -> DMatrix<f64> {
    let n = samples[0].len();
    let t = samples.len() as f64;
    let mean: Vec<f64> = (0..n).map(|r| samples.iter().map(|s| s[r]).sum::<f64>() / t).collect();
    let w = DMatrix::from_fn(n, samples.len(), |r, c| samples[c][r] - mean[r]);
    let eig = SymmetricEigen::new(&w * w.transpose());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Central finite-difference gradient of `f` at `w`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + h;
            let up = f(&probe);
            probe[i] = w[i] - h;
            let down = f(&probe);
            probe[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Random symmetric positive-definite matrix with eigenvalues spread over `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = orthonormalize(&DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal)));
    let diag = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64
        } else {
            0.0
        }
    });
    let m = &q * diag * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Random orthonormal `n x d` basis.
pub fn random_basis(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SubspaceBasis {
    let q = orthonormalize(&DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal)));
    let cols: Vec<Vec<f64>> = (0..d).map(|c| q.column(c).iter().copied().collect()).collect();
    SubspaceBasis::from_columns(&cols).unwrap()
}
