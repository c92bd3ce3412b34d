//! Random permeability fields.

mod disks;
mod gaussian;

use thiserror::Error;

use crate::mesh::TwoScaleMesh;

pub use disks::{rasterize_disks, sample_disk_layout, sample_random_disks, Disk, DiskFieldSpec};
pub use gaussian::{exponential_kernel, sample_log_gaussian, GaussianFieldSpec, KlBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("invalid field specification: {0}")]
    InvalidSpec(String),
    #[error("field has {got} values but the mesh has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("permeability at cell {cell} is {value}; values must be positive and finite")]
    NonPositive { cell: usize, value: f64 },
    #[error("covariance eigenvalue {index} is {value:e}, below the PSD tolerance")]
    NegativeEigenvalue { index: usize, value: f64 },
    #[error("KL eigensolver did not converge: {0}")]
    EigenNotConverged(String),
    #[error("could only place {placed} of {requested} disks within {attempts} attempts")]
    PlacementInfeasible { placed: usize, requested: usize, attempts: usize },
}

/// Strictly positive permeability per fine cell, row-major over the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    mesh: TwoScaleMesh,
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(mesh: TwoScaleMesh, values: Vec<f64>) -> Result<Self, CoeffError> {
        if values.len() != mesh.n_fine() {
            return Err(CoeffError::LengthMismatch { expected: mesh.n_fine(), got: values.len() });
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(CoeffError::NonPositive { cell, value });
        }
        Ok(Self { mesh, values })
    }

    pub fn constant(mesh: TwoScaleMesh, value: f64) -> Result<Self, CoeffError> {
        Self::new(mesh, vec![value; mesh.n_fine()])
    }

    pub fn mesh(&self) -> &TwoScaleMesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values of coarse element `element` in local (tile) order.
    pub fn element_values(&self, element: usize) -> Vec<f64> {
        self.mesh.element_cells(element).into_iter().map(|c| self.values[c]).collect()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Ratio of the largest to the smallest value.
    pub fn contrast(&self) -> f64 {
        self.max() / self.min()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, CoeffError> {
        Self::new(self.mesh, self.values.iter().map(|v| v * factor).collect())
    }
}
