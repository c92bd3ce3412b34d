//! Training records, their augmentations, and the MSDS dataset container.
//!
//! A record pairs an `m × m` coefficient tile with the non-constant part of
//! its local spectral basis. Labels are stored orthonormal with respect to
//! `diag(κ)`, i.e. the mass on a tile whose cells have unit area; the distance
//! used for training is unchanged by that uniform rescaling of the weight.

mod format;
mod kl;
mod symmetry;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::tile_pencil;
use crate::coeff::CoefficientField;
use crate::mesh::TwoScaleMesh;
use crate::spectral::{solve_lsp, SpectralError};

pub use format::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, DatasetHeader, FORMAT_VERSION, MAGIC};
pub use kl::{fit_kl, kl_augment, KlModel};
pub use symmetry::{apply_to_grid, symmetry_augment, Symmetry};

/// Tolerance of the label orthonormality checks.
pub const LABEL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("records need square coarse elements with square cells (got {mx}x{my} cells of {hx}x{hy})")]
    NonSquare { mx: usize, my: usize, hx: f64, hy: f64 },
    #[error("labels need n_c >= 2, got {0}")]
    TooFewModes(usize),
    #[error("tile has {got} values, expected {expected}")]
    TileLength { expected: usize, got: usize },
    #[error("tile value {index} is {value}; coefficients must be positive and finite")]
    NonPositive { index: usize, value: f64 },
    #[error("{transform:?} needs a square grid, got {nx}x{ny}")]
    DiagonalOnRectangle { transform: Symmetry, nx: usize, ny: usize },
    #[error("label is {rows}x{cols}, expected {expected_rows} rows")]
    LabelShape { rows: usize, cols: usize, expected_rows: usize },
    #[error("record {record}: {detail}")]
    Invariant { record: usize, detail: String },
    #[error("record {record}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { record: usize, stored: u32, computed: u32 },
    #[error("not a dataset file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u32),
    #[error("header mismatch: file has m = {file_m}, n_basis = {file_n_basis}; expected m = {m}, n_basis = {n_basis}")]
    HeaderMismatch { m: usize, n_basis: usize, file_m: usize, file_n_basis: usize },
    #[error("file truncated in {what}")]
    Truncated { what: String },
    #[error("KL model needs at least two tiles, got {0}")]
    TooFewTiles(usize),
    #[error("KL truncation {l} is outside 1..={max}")]
    Truncation { l: usize, max: usize },
    #[error("KL covariance eigenvalue {index} is {value:e}, below the tolerance")]
    NegativeEigenvalue { index: usize, value: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `(κ tile, label basis)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub m: usize,
    /// `m²` positive values, row-major.
    pub kappa: Vec<f64>,
    /// `m² × n_basis`, columns orthonormal in `diag(κ)` and orthogonal to constants.
    pub label: DMatrix<f64>,
}

impl DatasetRecord {
    pub fn n_basis(&self) -> usize {
        self.label.ncols()
    }

    /// Checks tile positivity and the two label invariants.
    pub fn validate(&self, record: usize) -> Result<(), DatasetError> {
        let n = self.m * self.m;
        if self.kappa.len() != n {
            return Err(DatasetError::TileLength { expected: n, got: self.kappa.len() });
        }
        if self.label.nrows() != n {
            return Err(DatasetError::LabelShape {
                rows: self.label.nrows(),
                cols: self.label.ncols(),
                expected_rows: n,
            });
        }
        if let Some((index, &value)) = self.kappa.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(DatasetError::NonPositive { index, value });
        }
        let k = self.n_basis();
        for p in 0..k {
            let col = self.label.column(p);
            let c: f64 = (0..n).map(|i| self.kappa[i] * col[i]).sum();
            if !(c.abs() <= LABEL_TOLERANCE) {
                return Err(DatasetError::Invariant {
                    record,
                    detail: format!("label column {p} has weighted constant component {c:e}"),
                });
            }
            for q in p..k {
                let g: f64 = (0..n).map(|i| col[i] * self.kappa[i] * self.label[(i, q)]).sum();
                let want = if p == q { 1.0 } else { 0.0 };
                if !((g - want).abs() <= LABEL_TOLERANCE) {
                    return Err(DatasetError::Invariant {
                        record,
                        detail: format!("label Gram entry ({p},{q}) is {g}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Label for one tile: local eigenvectors `2..=n_c`, rescaled to `diag(κ)`-orthonormality.
pub fn label_tile(kappa: &[f64], m: usize, n_c: usize) -> Result<DatasetRecord, DatasetError> {
    if kappa.len() != m * m {
        return Err(DatasetError::TileLength { expected: m * m, got: kappa.len() });
    }
    if n_c < 2 {
        return Err(DatasetError::TooFewModes(n_c));
    }
    let h = 1.0 / m as f64;
    let pencil = tile_pencil(kappa, m, m, h, h).map_err(SpectralError::from)?;
    let block = solve_lsp(&pencil, n_c)?;
    // mass-orthonormal with cell area h² becomes κ-orthonormal after scaling by h
    let label = block.basis.columns(1, n_c - 1) * h;
    Ok(DatasetRecord { m, kappa: kappa.to_vec(), label })
}

/// One record per coarse element, labelled by the local eigensolver.
pub fn extract_records(mesh: &TwoScaleMesh, kappa: &CoefficientField, n_c: usize) -> Result<Vec<DatasetRecord>, DatasetError> {
    if mesh.mx != mesh.my || (mesh.hx - mesh.hy).abs() > 1e-14 * mesh.hx {
        return Err(DatasetError::NonSquare { mx: mesh.mx, my: mesh.my, hx: mesh.hx, hy: mesh.hy });
    }
    if n_c < 2 {
        return Err(DatasetError::TooFewModes(n_c));
    }
    (0..mesh.n_coarse())
        .into_par_iter()
        .map(|j| {
            label_tile(&kappa.element_values(j), mesh.mx, n_c).map_err(|e| match e {
                DatasetError::Spectral(s) => DatasetError::Spectral(SpectralError::AtElement { element: j, source: Box::new(s) }),
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::rng::SeededStream;

    #[test]
    fn one_record_per_element() {
        let m = build_mesh(32, 32, 4, 4).unwrap();
        let mut rng = SeededStream::new(1);
        let k = CoefficientField::new(m, (0..1024).map(|_| rng.standard_normal().exp()).collect()).unwrap();
        let recs = extract_records(&m, &k, 5).unwrap();
        assert_eq!(recs.len(), 16);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!((r.m, r.n_basis()), (8, 4));
            r.validate(i).unwrap();
            assert_eq!(r.kappa, k.element_values(i));
        }
    }

    #[test]
    fn translated_tiles_give_identical_records() {
        let m = build_mesh(8, 8, 2, 2).unwrap();
        let tile: Vec<f64> = (0..16).map(|i| 1.0 + (i * 7 % 5) as f64).collect();
        let mut values = vec![1.0; 64];
        for j in [0, 3] {
            for (l, &c) in m.element_cells(j).iter().enumerate() {
                values[c] = tile[l];
            }
        }
        let recs = extract_records(&m, &CoefficientField::new(m, values).unwrap(), 3).unwrap();
        assert_eq!(recs[0], recs[3]);
    }

    #[test]
    fn rejects_rectangular_elements_and_tiny_n_c() {
        let m = build_mesh(8, 4, 2, 2).unwrap();
        let k = CoefficientField::constant(m, 1.0).unwrap();
        assert!(matches!(extract_records(&m, &k, 3), Err(DatasetError::NonSquare { .. })));
        let m = build_mesh(8, 8, 2, 2).unwrap();
        let k = CoefficientField::constant(m, 1.0).unwrap();
        assert!(extract_records(&m, &k, 1).is_err());
    }

    #[test]
    fn validate_detects_broken_labels() {
        let mut r = label_tile(&[1.0; 16], 4, 3).unwrap();
        r.validate(0).unwrap();
        r.label[(0, 0)] += 1e-6;
        assert!(matches!(r.validate(3), Err(DatasetError::Invariant { record: 3, .. })));
    }
}
