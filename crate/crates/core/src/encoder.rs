//! Out-of-sample hash functions: a ridge regression from kernel features to
//! the learned codes, fitted per modality after training.

use nalgebra::DMatrix;

use crate::dataio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::kernelfeat::KernelMap;
use crate::linalg::sign;
use crate::retrieval::CodeSet;

pub const DEFAULT_LAMBDA_H: f64 = 1.0;

/// Hash function of one modality: kernel map followed by a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoder {
    pub kernel: KernelMap,
    /// `k x r`
    pub p_h: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoder {
    pub modalities: Vec<ModalityEncoder>,
    pub lambda_h: f64,
}

impl HashEncoder {
    pub fn new(modalities: Vec<ModalityEncoder>, lambda_h: f64) -> Result<Self> {
        if !(lambda_h > 0.0 && lambda_h.is_finite()) {
            return Err(Error::Validation(format!("lambda_h must be > 0, got {lambda_h}")));
        }
        let bits = modalities.first().map(|m| m.p_h.ncols());
        for (t, m) in modalities.iter().enumerate() {
            if Some(m.p_h.ncols()) != bits {
                return Err(Error::Validation(format!(
                    "modality {} projects to {} bits, expected {}",
                    t + 1,
                    m.p_h.ncols(),
                    bits.unwrap_or(0)
                )));
            }
            if m.p_h.nrows() != m.kernel.k() {
                return Err(Error::Validation(format!(
                    "modality {} projection has {} rows for {} anchors",
                    t + 1,
                    m.p_h.nrows(),
                    m.kernel.k()
                )));
            }
        }
        Ok(HashEncoder {
            modalities,
            lambda_h,
        })
    }

    pub fn bits(&self) -> usize {
        self.modalities.first().map_or(0, |m| m.p_h.ncols())
    }

    /// `modality` is 1-based.
    pub fn modality(&self, modality: usize) -> Result<&ModalityEncoder> {
        modality
            .checked_sub(1)
            .and_then(|i| self.modalities.get(i))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "modality {modality} out of range 1..={}",
                    self.modalities.len()
                ))
            })
    }
}

/// `(X^T X + lambda_h I)^-1 X^T B` with `X` instance-major (`n x k`) and `B`
/// the codes as `n x r` reals.
pub fn fit_ridge_encoder(phix: &DMatrix<f64>, codes: &DMatrix<f64>, lambda_h: f64) -> Result<DMatrix<f64>> {
    if !(lambda_h > 0.0 && lambda_h.is_finite()) {
        return Err(Error::Validation(format!("lambda_h must be > 0, got {lambda_h}")));
    }
    if phix.nrows() == 0 || phix.nrows() != codes.nrows() {
        return Err(Error::Validation(format!(
            "ridge regression needs matching non-empty rows, got {} features and {} codes",
            phix.nrows(),
            codes.nrows()
        )));
    }
    let k = phix.ncols();
    let mut gram = phix.tr_mul(phix);
    for i in 0..k {
        gram[(i, i)] += lambda_h;
    }
    let rhs = phix.tr_mul(codes);
    match gram.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => {
            let diag = gram.diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
            Err(Error::Numerical(format!(
                "ridge system is not positive definite (diagonal range [{lo:e}, {hi:e}], condition >= {:e})",
                hi / lo.abs().max(f64::MIN_POSITIVE)
            )))
        }
    }
}

/// Fit one hash function per modality from the trained `r x n` codes.
pub fn fit_encoder(
    kernels: Vec<KernelMap>,
    phix: &[DMatrix<f64>],
    codes: &DMatrix<f64>,
    lambda_h: f64,
) -> Result<HashEncoder> {
    let targets = codes.transpose();
    let modalities = kernels
        .into_iter()
        .zip(phix)
        .map(|(kernel, x)| {
            Ok(ModalityEncoder {
                p_h: fit_ridge_encoder(x, &targets, lambda_h)?,
                kernel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HashEncoder::new(modalities, lambda_h)
}

/// Real-valued projections `phi(x) P_h`, `n x r`, before taking signs.
pub fn project(x_raw: &DMatrix<f64>, enc: &ModalityEncoder) -> Result<DMatrix<f64>> {
    if x_raw.ncols() != enc.kernel.input_dim() {
        return Err(Error::Validation(format!(
            "feature dimension mismatch: model expects {} columns, got {}",
            enc.kernel.input_dim(),
            x_raw.ncols()
        )));
    }
    Ok(enc.kernel.transform(x_raw)? * &enc.p_h)
}

/// `sgn(phi(x) P_h)`, bit-packed. `modality` is 1-based.
pub fn encode(x_raw: &FeatureMatrix, enc: &HashEncoder, modality: usize) -> Result<CodeSet> {
    let projected = project(x_raw.values(), enc.modality(modality)?)?;
    Ok(CodeSet::from_signs(&projected.map(sign)))
}
