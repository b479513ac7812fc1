//! Anchor-based RBF feature maps.
//!
//! Each modality is mapped to `k` Gaussian similarities against anchors drawn
//! from its own training rows. The kernelized training matrix is centered
//! column-wise and the training mean is frozen into the [`KernelMap`] so that
//! out-of-sample rows are shifted by the same amount.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::dataio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_WIDTH_SAMPLE_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMap {
    anchors: DMatrix<f64>,
    sigma: f64,
    center: DVector<f64>,
}

impl KernelMap {
    pub fn new(anchors: DMatrix<f64>, sigma: f64, center: DVector<f64>) -> Result<Self> {
        if anchors.nrows() == 0 || anchors.ncols() == 0 {
            return Err(Error::Validation("kernel map needs at least one anchor".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Validation(format!("kernel width must be > 0, got {sigma}")));
        }
        if anchors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("anchors must be finite".into()));
        }
        if center.len() != anchors.nrows() {
            return Err(Error::Validation(format!(
                "kernel center has length {} but there are {} anchors",
                center.len(),
                anchors.nrows()
            )));
        }
        Ok(KernelMap {
            anchors,
            sigma,
            center,
        })
    }

    /// Draw anchors, estimate the width and center the training features.
    /// Returns the map and the centered `n x k` training kernel matrix.
    pub fn fit(
        x: &DMatrix<f64>,
        k: usize,
        seed: u64,
        sample_cap: usize,
    ) -> Result<(Self, DMatrix<f64>)> {
        let anchors = select_anchors(x, k, seed)?;
        let sigma = estimate_width(x, &anchors, sample_cap, seed)?;
        let mut phi = kernel_values(x, &anchors, sigma)?;
        let n = phi.nrows() as f64;
        let center = DVector::from_iterator(k, phi.column_iter().map(|c| c.sum() / n));
        for (mut col, &mu) in phi.column_iter_mut().zip(center.iter()) {
            col.add_scalar_mut(-mu);
        }
        Ok((
            KernelMap {
                anchors,
                sigma,
                center,
            },
            phi,
        ))
    }

    /// Centered kernel features for rows of `x`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut phi = kernel_values(x, &self.anchors, self.sigma)?;
        for (mut col, &mu) in phi.column_iter_mut().zip(self.center.iter()) {
            col.add_scalar_mut(-mu);
        }
        Ok(phi)
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn k(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.anchors.ncols()
    }
}

/// `k` distinct training rows, sampled uniformly without replacement.
pub fn select_anchors(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Validation(format!(
            "anchor count k={k} must satisfy 1 <= k <= n={n}"
        )));
    }
    let mut rng = seed::rng(seed, "kernel/anchors", 0);
    let rows: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    Ok(x.select_rows(&rows))
}

/// Mean Euclidean distance between up to `sample_cap` training rows and all
/// anchors.
pub fn estimate_width(
    x: &DMatrix<f64>,
    anchors: &DMatrix<f64>,
    sample_cap: usize,
    seed: u64,
) -> Result<f64> {
    if anchors.nrows() == 0 {
        return Err(Error::Validation("no anchors".into()));
    }
    if x.ncols() != anchors.ncols() {
        return Err(dim_mismatch(anchors.ncols(), x.ncols()));
    }
    let n = x.nrows();
    let cap = sample_cap.max(1);
    let rows: Vec<usize> = if n <= cap {
        (0..n).collect()
    } else {
        let mut rng = seed::rng(seed, "kernel/width", 0);
        index::sample(&mut rng, n, cap).into_vec()
    };
    let mut total = 0.0;
    for &i in &rows {
        for a in anchors.row_iter() {
            total += (x.row(i) - a).norm();
        }
    }
    let sigma = total / (rows.len() * anchors.nrows()) as f64;
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Degenerate(
            "every sampled point coincides with every anchor; kernel width is 0".into(),
        ));
    }
    Ok(sigma)
}

fn dim_mismatch(expected: usize, actual: usize) -> Error {
    Error::Validation(format!(
        "feature dimension mismatch: expected {expected} columns, got {actual}"
    ))
}

/// Uncentered `exp(-||x_i - a_j||^2 / (2 sigma^2))`, one row per instance.
pub fn kernel_values(x: &DMatrix<f64>, anchors: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != anchors.ncols() {
        return Err(dim_mismatch(anchors.ncols(), x.ncols()));
    }
    let (n, k) = (x.nrows(), anchors.nrows());
    // feature-major copies so the inner loop walks contiguous memory
    let xt = x.transpose();
    let at = anchors.transpose();
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut out = DMatrix::zeros(n, k);
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let a = at.column(j);
        for (i, slot) in col.iter_mut().enumerate() {
            let d2: f64 = xt
                .column(i)
                .iter()
                .zip(a.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            *slot = (scale * d2).exp();
        }
    }
    Ok(out)
}

/// Centered kernel features of `x` under a fitted map.
pub fn kernelize(x: &FeatureMatrix, km: &KernelMap) -> Result<FeatureMatrix> {
    FeatureMatrix::new(km.transform(x.values())?, x.modality_id())
}
