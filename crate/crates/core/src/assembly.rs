//! TPFA operator, source vectors and per-element stiffness/mass pencils.
//!
//! Each interior edge `e` with neighbours `(-, +)` contributes the
//! transmissibility `t_e = kappa_e |e|² / (h_x h_y)`, where `kappa_e` is the
//! harmonic mean of the two cell values. `A` gets `+t_e` on both diagonals and
//! `-t_e` on the off-diagonal pair. With no-flux boundaries every row sums to zero.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::coeff::CoefficientField;
use crate::mesh::{Edge, MeshError, TwoScaleMesh};

pub use crate::linalg::SparseOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("coefficient field belongs to a different mesh")]
    MeshMismatch,
    #[error("permeability at cell {cell} is {value}; values must be positive and finite")]
    NonPositive { cell: usize, value: f64 },
    #[error("source has {got} entries but the mesh has {expected} cells")]
    SourceLength { expected: usize, got: usize },
    #[error("source sums to {sum:e}, violating the no-flux compatibility condition (tolerance {tolerance:e})")]
    Incompatible { sum: f64, tolerance: f64 },
    #[error("tile has {got} values, expected {expected}")]
    TileLength { expected: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn harmonic_face_value(k_minus: f64, k_plus: f64) -> f64 {
    2.0 / (1.0 / k_minus + 1.0 / k_plus)
}

fn transmissibility(edge: &Edge, kappa: &[f64], cell_area: f64) -> f64 {
    harmonic_face_value(kappa[edge.minus], kappa[edge.plus]) * edge.length * edge.length / cell_area
}

fn check_values(values: &[f64]) -> Result<(), AssemblyError> {
    match values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        Some((cell, &value)) => Err(AssemblyError::NonPositive { cell, value }),
        None => Ok(()),
    }
}

/// Global TPFA operator `A` for the no-flux problem.
pub fn assemble_tpfa(mesh: &TwoScaleMesh, kappa: &CoefficientField) -> Result<SparseOperator, AssemblyError> {
    if kappa.mesh() != mesh {
        return Err(AssemblyError::MeshMismatch);
    }
    let k = kappa.values();
    check_values(k)?;
    let edges = mesh.interior_edges();
    let area = mesh.cell_area();
    let mut triplets = Vec::with_capacity(4 * edges.len());
    for e in &edges {
        let t = transmissibility(e, k, area);
        triplets.push((e.minus, e.minus, t));
        triplets.push((e.plus, e.plus, t));
        triplets.push((e.minus, e.plus, -t));
        triplets.push((e.plus, e.minus, -t));
    }
    Ok(SparseOperator::from_triplets(mesh.n_fine(), triplets))
}

/// Right-hand side patterns.
#[derive(Debug, Clone, PartialEq)]
pub enum SourcePattern {
    /// `+1` in the top-left and bottom-right cells, `-1` in the bottom-left and top-right cells.
    Corners,
    Zero,
    /// Cell-integrated source values; must sum to zero.
    Custom(Vec<f64>),
}

/// Discrete source vector `F` (cell integrals of `f`).
pub fn assemble_source(mesh: &TwoScaleMesh, pattern: &SourcePattern) -> Result<Vec<f64>, AssemblyError> {
    let n = mesh.n_fine();
    match pattern {
        SourcePattern::Zero => Ok(vec![0.0; n]),
        SourcePattern::Corners => {
            let mut f = vec![0.0; n];
            let (bl, br) = (mesh.cell_index(0, 0), mesh.cell_index(mesh.nx - 1, 0));
            let (tl, tr) = (mesh.cell_index(0, mesh.ny - 1), mesh.cell_index(mesh.nx - 1, mesh.ny - 1));
            f[tl] += 1.0;
            f[br] += 1.0;
            f[bl] -= 1.0;
            f[tr] -= 1.0;
            Ok(f)
        }
        SourcePattern::Custom(values) => {
            if values.len() != n {
                return Err(AssemblyError::SourceLength { expected: n, got: values.len() });
            }
            let sum: f64 = values.iter().sum();
            let tolerance = 1e-12 * values.iter().map(|v| v.abs()).sum::<f64>();
            if sum.abs() > tolerance {
                return Err(AssemblyError::Incompatible { sum, tolerance });
            }
            Ok(values.clone())
        }
    }
}

/// Stiffness/mass pair of one coarse element's local spectral problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPencil {
    /// TPFA stiffness restricted to the element's interior edges, local ordering.
    pub stiffness: DMatrix<f64>,
    /// Diagonal mass `kappa_tau * h_x * h_y`.
    pub mass: DVector<f64>,
}

/// Pencil for an `mx × my` tile of cell values given in local row-major order.
pub fn tile_pencil(values: &[f64], mx: usize, my: usize, hx: f64, hy: f64) -> Result<LocalPencil, AssemblyError> {
    let n = mx * my;
    if values.len() != n {
        return Err(AssemblyError::TileLength { expected: n, got: values.len() });
    }
    check_values(values)?;
    let area = hx * hy;
    let mut stiffness = DMatrix::zeros(n, n);
    let mut add = |a: usize, b: usize, len: f64| {
        let t = harmonic_face_value(values[a], values[b]) * len * len / area;
        stiffness[(a, a)] += t;
        stiffness[(b, b)] += t;
        stiffness[(a, b)] -= t;
        stiffness[(b, a)] -= t;
    };
    for b in 0..my {
        for a in 0..mx.saturating_sub(1) {
            add(b * mx + a, b * mx + a + 1, hy);
        }
    }
    for b in 0..my.saturating_sub(1) {
        for a in 0..mx {
            add(b * mx + a, (b + 1) * mx + a, hx);
        }
    }
    let mass = DVector::from_iterator(n, values.iter().map(|k| k * area));
    Ok(LocalPencil { stiffness, mass })
}

/// Pencil of coarse element `element`, with `kappa_tilde = kappa`.
pub fn local_pencil(mesh: &TwoScaleMesh, kappa: &CoefficientField, element: usize) -> Result<LocalPencil, AssemblyError> {
    if kappa.mesh() != mesh {
        return Err(AssemblyError::MeshMismatch);
    }
    if element >= mesh.n_coarse() {
        return Err(MeshError::ElementOutOfRange { index: element, count: mesh.n_coarse() }.into());
    }
    tile_pencil(&kappa.element_values(element), mesh.mx, mesh.my, mesh.hx, mesh.hy)
}
