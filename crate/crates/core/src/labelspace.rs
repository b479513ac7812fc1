//! Normalized label matrix and the small Gram contractions built from it.
//!
//! The trainer never forms the `n x n` affinity `G^T G`; every term it needs
//! reduces to `c x c` products such as `L G^T` and `G G^T`, which are cached
//! here.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::dataio::RawLabelMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LabelSet {
    l: DMatrix<f64>,
    g: DMatrix<f64>,
    lt: DMatrix<f64>,
    gt: DMatrix<f64>,
    l_gt: DMatrix<f64>,
    g_gt: DMatrix<f64>,
    l_lt: DMatrix<f64>,
}

/// Column-normalize a validated label matrix: `g_i = l_i / ||l_i||`.
pub fn normalize_labels(labels: &RawLabelMatrix) -> LabelSet {
    let l = labels.values().clone();
    let mut g = l.clone();
    for mut col in g.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let lt = l.transpose();
    let gt = g.transpose();
    let l_gt = &l * &gt;
    let g_gt = &g * &gt;
    let l_lt = &l * &lt;
    LabelSet {
        l,
        g,
        lt,
        gt,
        l_gt,
        g_gt,
        l_lt,
    }
}

impl LabelSet {
    pub fn n(&self) -> usize {
        self.l.ncols()
    }

    pub fn classes(&self) -> usize {
        self.l.nrows()
    }

    /// Binary labels, `c x n`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Unit-norm columns, `c x n`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn l_transposed(&self) -> &DMatrix<f64> {
        &self.lt
    }

    pub fn g_transposed(&self) -> &DMatrix<f64> {
        &self.gt
    }

    /// `L G^T`, `c x c`.
    pub fn l_gt(&self) -> &DMatrix<f64> {
        &self.l_gt
    }

    /// `G G^T`, `c x c`. Its squared Frobenius norm equals that of `G^T G`.
    pub fn g_gt(&self) -> &DMatrix<f64> {
        &self.g_gt
    }

    /// `L L^T`, `c x c`.
    pub fn l_lt(&self) -> &DMatrix<f64> {
        &self.l_lt
    }

    /// `(G^T G)[rows, cols]`. Test oracle only; training never calls it.
    pub fn semantic_affinity_block(&self, rows: Range<usize>, cols: Range<usize>) -> Result<DMatrix<f64>> {
        let n = self.n();
        for (what, r) in [("row", &rows), ("column", &cols)] {
            if r.start > r.end || r.end > n {
                return Err(Error::Validation(format!(
                    "{what} range {}..{} out of bounds for n={n}",
                    r.start, r.end
                )));
            }
        }
        let a = self.g.columns(rows.start, rows.len());
        let b = self.g.columns(cols.start, cols.len());
        Ok(a.tr_mul(&b))
    }
}
