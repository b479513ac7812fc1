//! Small dense linear-algebra helpers shared by the trainer and its tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the diagonal sign convention fixed).
pub fn random_orthogonal<R: Rng + ?Sized>(r: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = gaussian(r, r, rng).qr();
    let mut q = qr.q();
    let tri = qr.r();
    for j in 0..r {
        if tri[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Ties go to +1.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Project `v` off every column of `basis` (classical Gram–Schmidt, applied
/// twice).
fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let coef = q.dot(v);
            v.axpy(-coef, q, 1.0);
        }
    }
}

/// Orthonormalize `columns` in order against `fixed` and each other.
///
/// Columns whose residual norm falls below `1e-10` of their original norm are
/// replaced by seeded Gaussian vectors, so the output always has exactly
/// `columns.len()` orthonormal vectors.
pub fn orthonormalize<R: Rng + ?Sized>(
    fixed: &[DVector<f64>],
    columns: Vec<DVector<f64>>,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let dim = fixed
        .first()
        .or(columns.first())
        .map_or(0, |v| v.len());
    assert!(
        fixed.len() + columns.len() <= dim,
        "cannot fit {} orthonormal vectors in dimension {dim}",
        fixed.len() + columns.len()
    );
    let mut basis: Vec<DVector<f64>> = fixed.to_vec();
    let mut out = Vec::with_capacity(columns.len());
    for mut v in columns {
        loop {
            let before = v.norm();
            project_out(&mut v, &basis);
            let after = v.norm();
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 0.0 {
                v /= after;
                break;
            }
            v = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
        }
        basis.push(v.clone());
        out.push(v);
    }
    out
}

/// `count` seeded orthonormal vectors orthogonal to `fixed`.
pub fn orthonormal_completion<R: Rng + ?Sized>(
    fixed: &[DVector<f64>],
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let draws = (0..count)
        .map(|_| DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
        .collect();
    orthonormalize(fixed, draws, rng)
}

pub fn ones_unit(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / (n as f64).sqrt())
}

/// Random `r x n` matrix with `V V^T = n I` and `V 1 = 0`.
pub fn random_balanced_latent<R: Rng + ?Sized>(r: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let rows = orthonormal_completion(&[ones_unit(n)], n, r, rng);
    let scale = (n as f64).sqrt();
    DMatrix::from_fn(r, n, |i, j| scale * rows[i][j])
}
