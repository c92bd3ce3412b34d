//! Generalized-multiscale two-grid preconditioning for TPFA Darcy systems.
//!
//! The crate covers the whole numerical pipeline:
//!
//! - [`mesh`]: two-scale uniform quadrilateral grids and their edge sets.
//! - [`coeff`]: log-Gaussian (Karhunen–Loève) and random-disk permeability fields.
//! - [`assembly`]: the TPFA operator, source vectors and per-element stiffness/mass pencils.
//! - [`spectral`]: local spectral problems and the block-diagonal prolongation.
//! - [`subspace`]: weighted orthonormalization and the subspace distance.
//! - [`precond`]: block-Jacobi smoother, two-grid preconditioner, PCG and the
//!   error-operator norm estimator.
//! - [`surrogate`]: U-Net weight loading and forward inference producing
//!   prolongation blocks without eigensolves.
//! - [`datagen`]: dataset records, symmetry and KL augmentation, and the dataset file format.
//! - [`verify`]: quick invariant suites used by `gmsnet verify`.

pub mod assembly;
pub mod coeff;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod precond;
pub mod rng;
pub mod spectral;
pub mod subspace;
pub mod surrogate;
pub mod verify;

pub use error::{Error, Result};
