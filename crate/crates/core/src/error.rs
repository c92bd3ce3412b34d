use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::coeff::CoeffError;
use crate::datagen::DatasetError;
use crate::mesh::MeshError;
use crate::precond::PrecondError;
use crate::spectral::SpectralError;
use crate::subspace::SubspaceError;
use crate::surrogate::SurrogateError;

/// Umbrella error for callers driving the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
