//! Convolutional surrogate for the local spectral problems.
//!
//! The network sees the standardized log-coefficient of one coarse element
//! and predicts its `n_c − 1` non-constant basis functions. The constant is
//! added analytically and the block is orthonormalized in 64-bit arithmetic.

mod unet;
mod weights;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::local_pencil;
use crate::coeff::CoefficientField;
use crate::mesh::TwoScaleMesh;
use crate::spectral::{solve_lsp, CoarseBlock, Prolongation, SpectralError};
use crate::subspace::{orthonormalize_matrix, SubspaceError};

pub use unet::{unet_forward, FeatureMap, SurrogateOutput};
pub use weights::{
    load_weights, load_weights_from, save_weights, save_weights_to, Architecture, Tensor, UNetWeights, FORMAT_VERSION, MAGIC,
};

/// Floor of the per-element standard deviation used to standardize the input.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("not a weight file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("weight file truncated at byte {offset} while reading {reading} (last complete tensor: {last_tensor:?})")]
    Truncated { offset: u64, reading: String, last_tensor: Option<String> },
    #[error("tensor name at byte {offset} is not valid UTF-8 of sensible length")]
    BadName { offset: u64 },
    #[error("unexpected tensor {0:?}")]
    UnknownTensor(String),
    #[error("tensor {0:?} appears twice")]
    DuplicateTensor(String),
    #[error("tensor {0:?} is missing")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("tensor {name:?} has a non-finite value at index {offset}")]
    NonFinite { name: String, offset: usize },
    #[error("tensor {name:?} has a non-finite value at byte {offset}")]
    NonFiniteAt { name: String, offset: u64 },
    #[error("network input has {got} values, expected {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("coarse elements of {mx}x{my} cells cannot be resampled to the {side}x{side} network input")]
    ElementShape { mx: usize, my: usize, side: usize },
    #[error("coarse element {element}: predicted basis is rank deficient ({source})")]
    RankDeficient {
        element: usize,
        #[source]
        source: SubspaceError,
    },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prolongation from the network, with the elements that needed the eigensolver.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub prolongation: Prolongation,
    pub fallback_elements: Vec<usize>,
}

/// `(log κ − mean) / max(std, 1e-8)` over one tile (population statistics).
pub fn standardize_log(tile: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = tile.iter().map(|v| v.ln()).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    z.into_iter().map(|v| (v - mean) / std).collect()
}

/// Nearest-neighbour upsampling of an `m × m` tile by `factor`.
fn upsample(tile: &[f64], m: usize, factor: usize) -> Vec<f32> {
    let s = m * factor;
    (0..s * s).map(|k| tile[(k / s / factor) * m + (k % s) / factor] as f32).collect()
}

/// Block means of an `(m·factor)²` plane.
fn downsample(plane: &[f32], m: usize, factor: usize) -> Vec<f64> {
    let s = m * factor;
    let mut out = vec![0.0; m * m];
    for (k, v) in plane.iter().enumerate() {
        out[(k / s / factor) * m + (k % s) / factor] += *v as f64;
    }
    let area = (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}

fn element_factor(weights: &UNetWeights, mesh: &TwoScaleMesh) -> Result<usize, SurrogateError> {
    let side = weights.architecture().input_side;
    if mesh.mx != mesh.my || mesh.mx == 0 || !side.is_multiple_of(mesh.mx) {
        return Err(SurrogateError::ElementShape { mx: mesh.mx, my: mesh.my, side });
    }
    Ok(side / mesh.mx)
}

/// Basis of one element from the raw network channels: constant component
/// removed in the `κ·h_x·h_y` weight, constant column prepended, whitened.
fn block_from_channels(channels: &[Vec<f64>], mass: &[f64], element: usize) -> Result<CoarseBlock, SurrogateError> {
    let n = mass.len();
    let total: f64 = mass.iter().sum();
    let mut basis = DMatrix::zeros(n, channels.len() + 1);
    basis.column_mut(0).fill(1.0 / total.sqrt());
    for (k, ch) in channels.iter().enumerate() {
        let shift = ch.iter().zip(mass).map(|(v, w)| v * w).sum::<f64>() / total;
        for i in 0..n {
            basis[(i, k + 1)] = ch[i] - shift;
        }
    }
    let t = orthonormalize_matrix(&basis, mass).map_err(|source| SurrogateError::RankDeficient { element, source })?;
    Ok(CoarseBlock::from_basis(element, t.into_matrix()))
}

fn predict_element(weights: &UNetWeights, mesh: &TwoScaleMesh, kappa: &CoefficientField, factor: usize, element: usize) -> Result<CoarseBlock, SurrogateError> {
    let tile = kappa.element_values(element);
    let input = upsample(&standardize_log(&tile), mesh.mx, factor);
    let out = unet_forward(weights, &input)?;
    let channels: Vec<Vec<f64>> = (0..out.channels).map(|c| downsample(out.plane(c), mesh.mx, factor)).collect();
    let mass: Vec<f64> = tile.iter().map(|k| k * mesh.cell_area()).collect();
    block_from_channels(&channels, &mass, element)
}

fn predict(weights: &UNetWeights, mesh: &TwoScaleMesh, kappa: &CoefficientField, fallback: bool) -> Result<Prediction, SurrogateError> {
    let factor = element_factor(weights, mesh)?;
    let n_c = weights.architecture().out_channels + 1;
    if n_c > mesh.cells_per_element() {
        return Err(SpectralError::TooManyModes { n_c, size: mesh.cells_per_element() }.into());
    }
    let results: Vec<Result<(CoarseBlock, bool), SurrogateError>> = (0..mesh.n_coarse())
        .into_par_iter()
        .map(|j| match predict_element(weights, mesh, kappa, factor, j) {
            Ok(block) => Ok((block, false)),
            Err(SurrogateError::RankDeficient { .. }) if fallback => {
                let pencil = local_pencil(mesh, kappa, j).map_err(SpectralError::from)?;
                let mut block = solve_lsp(&pencil, n_c).map_err(|e| SpectralError::AtElement { element: j, source: Box::new(e) })?;
                block.element = j;
                Ok((block, true))
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut blocks = Vec::with_capacity(results.len());
    let mut fallback_elements = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        let (block, fell_back) = r?;
        if fell_back {
            fallback_elements.push(j);
        }
        blocks.push(block);
    }
    if !fallback_elements.is_empty() {
        log::warn!("{} element(s) fell back to the eigensolver", fallback_elements.len());
    }
    Ok(Prediction { prolongation: Prolongation::new(*mesh, blocks)?, fallback_elements })
}

/// Network prolongation; a degenerate prediction on any element is an error.
pub fn predict_prolongation(weights: &UNetWeights, mesh: &TwoScaleMesh, kappa: &CoefficientField) -> Result<Prolongation, SurrogateError> {
    predict(weights, mesh, kappa, false).map(|p| p.prolongation)
}

/// Network prolongation that solves the local spectral problem wherever the
/// prediction is rank deficient, reporting those elements.
pub fn predict_prolongation_with_fallback(
    weights: &UNetWeights,
    mesh: &TwoScaleMesh,
    kappa: &CoefficientField,
) -> Result<Prediction, SurrogateError> {
    predict(weights, mesh, kappa, true)
}
