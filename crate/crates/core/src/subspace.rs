//! Weighted orthonormalization and the distance between equal-dimension subspaces.
//!
//! For blocks `B₁`, `B₂` with `k` columns and a positive diagonal weight `W`,
//! both are whitened to `Tᵢ` with `Tᵢᵀ W Tᵢ = I` and the distance is
//! `√(k − ‖T₁ᵀ W T₂‖_F²)`, clamped at zero.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{dense_cholesky, FactorError};
use crate::spectral::CoarseBlock;

/// Relative jitter added to the Gram diagonal after a failed factorization.
pub const JITTER: f64 = 1e-12;

/// Largest entry of `TᵀWT − I` accepted after a jittered factorization.
const JITTERED_GRAM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("block has {rows} rows but the weight has {weight} entries")]
    WeightLength { rows: usize, weight: usize },
    #[error("weight entry {index} is {value}; weights must be positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("blocks differ in shape: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    ShapeMismatch { a_rows: usize, a_cols: usize, b_rows: usize, b_cols: usize },
    #[error("block has no columns")]
    Empty,
    #[error("block is numerically rank deficient (Cholesky pivot {pivot})")]
    RankDeficient { pivot: usize },
}

/// Columns orthonormal with respect to `diag(weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBlock {
    t: DMatrix<f64>,
    weight: Vec<f64>,
}

impl OrthonormalBlock {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.t
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn k(&self) -> usize {
        self.t.ncols()
    }
}

fn check_weight(rows: usize, weight: &[f64]) -> Result<(), SubspaceError> {
    if weight.len() != rows {
        return Err(SubspaceError::WeightLength { rows, weight: weight.len() });
    }
    match weight.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
        Some((index, &value)) => Err(SubspaceError::InvalidWeight { index, value }),
        None => Ok(()),
    }
}

fn weighted_gram(b: &DMatrix<f64>, weight: &[f64]) -> DMatrix<f64> {
    let k = b.ncols();
    let mut g = DMatrix::zeros(k, k);
    for p in 0..k {
        for q in p..k {
            let s: f64 = (0..b.nrows()).map(|i| b[(i, p)] * weight[i] * b[(i, q)]).sum();
            g[(p, q)] = s;
            g[(q, p)] = s;
        }
    }
    g
}

/// `T = B · L⁻ᵀ` where `L Lᵀ = Bᵀ W B`.
///
/// If the Gram factorization fails, `1e-12 · trace(G) / k` is added to the
/// diagonal once; a second failure is reported as rank deficiency. A jittered
/// factor whose whitened Gram matrix is still far from the identity is also
/// rejected, naming the pivot that lost the most relative magnitude. The
/// result is whitened a second time against its own Gram matrix.
pub fn orthonormalize_matrix(basis: &DMatrix<f64>, weight: &[f64]) -> Result<OrthonormalBlock, SubspaceError> {
    check_weight(basis.nrows(), weight)?;
    let k = basis.ncols();
    if k == 0 {
        return Err(SubspaceError::Empty);
    }
    let mut g = weighted_gram(basis, weight);
    let (l, jittered) = match dense_cholesky(&g) {
        Ok(l) => (l, false),
        Err(_) => {
            let eps = JITTER * g.trace() / k as f64;
            for i in 0..k {
                g[(i, i)] += eps;
            }
            let l = dense_cholesky(&g)
                .map_err(|FactorError::NotPositiveDefinite { pivot, .. }| SubspaceError::RankDeficient { pivot })?;
            (l, true)
        }
    };
    let weakest_pivot = || {
        (0..k)
            .min_by(|&a, &b| (l[(a, a)].powi(2) / g[(a, a)]).total_cmp(&(l[(b, b)].powi(2) / g[(b, b)])))
            .unwrap_or(0)
    };
    // T Lᵀ = B, i.e. L Tᵀ = Bᵀ
    let tt = l
        .solve_lower_triangular(&basis.transpose())
        .ok_or(SubspaceError::RankDeficient { pivot: 0 })?;
    let t = tt.transpose();
    if t.iter().any(|v| !v.is_finite()) {
        return Err(SubspaceError::RankDeficient { pivot: weakest_pivot() });
    }
    let g2 = weighted_gram(&t, weight);
    if jittered && (&g2 - DMatrix::identity(k, k)).amax() > JITTERED_GRAM_TOLERANCE {
        return Err(SubspaceError::RankDeficient { pivot: weakest_pivot() });
    }
    // Second whitening pass: the first leaves an orthogonality defect of order
    // eps·cond(G), which this reduces to roundoff.
    let l2 = dense_cholesky(&g2).map_err(|_| SubspaceError::RankDeficient { pivot: weakest_pivot() })?;
    let t = l2
        .solve_lower_triangular(&t.transpose())
        .ok_or(SubspaceError::RankDeficient { pivot: weakest_pivot() })?
        .transpose();
    Ok(OrthonormalBlock { t, weight: weight.to_vec() })
}

pub fn orthonormalize(block: &CoarseBlock, weight: &[f64]) -> Result<OrthonormalBlock, SubspaceError> {
    orthonormalize_matrix(&block.basis, weight)
}

/// Distance between the column spans of two raw blocks.
pub fn dist_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, weight: &[f64]) -> Result<f64, SubspaceError> {
    if a.shape() != b.shape() {
        return Err(SubspaceError::ShapeMismatch {
            a_rows: a.nrows(),
            a_cols: a.ncols(),
            b_rows: b.nrows(),
            b_cols: b.ncols(),
        });
    }
    let ta = orthonormalize_matrix(a, weight)?;
    let tb = orthonormalize_matrix(b, weight)?;
    Ok(dist_orthonormal(&ta, &tb))
}

pub fn dist(a: &CoarseBlock, b: &CoarseBlock, weight: &[f64]) -> Result<f64, SubspaceError> {
    dist_matrices(&a.basis, &b.basis, weight)
}

/// Squared W-norm of the part of `b` outside the span of orthonormal `a`.
fn residual_norm2(a: &OrthonormalBlock, b: &OrthonormalBlock) -> f64 {
    let (ta, tb, w) = (&a.t, &b.t, &a.weight);
    let cross = DMatrix::from_fn(ta.ncols(), tb.ncols(), |p, q| {
        (0..ta.nrows()).map(|i| ta[(i, p)] * w[i] * tb[(i, q)]).sum::<f64>()
    });
    let r = tb - ta * cross;
    (0..r.ncols())
        .map(|q| (0..r.nrows()).map(|i| w[i] * r[(i, q)] * r[(i, q)]).sum::<f64>())
        .sum()
}

/// Distance between blocks already orthonormal in the same weight.
///
/// `k − ‖T₁ᵀWT₂‖_F²` equals the squared W-norm of `(I − T₁T₁ᵀW)T₂`; that form
/// is evaluated in both directions and averaged, which keeps the result exactly
/// symmetric and avoids cancellation when the spans nearly coincide.
pub fn dist_orthonormal(a: &OrthonormalBlock, b: &OrthonormalBlock) -> f64 {
    let d2 = 0.5 * (residual_norm2(a, b) + residual_norm2(b, a));
    d2.max(0.0).sqrt()
}
