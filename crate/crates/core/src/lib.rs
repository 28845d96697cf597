//! Volumetric numerics for deformation-method grid generation and the
//! Jacobian-determinant / curl feature images derived from it.
//!
//! - [`field`]: lattice geometry, scalar/vector fields, node maps, labels
//! - [`nifti`]: NIfTI-1 subset I/O
//! - [`numerics`]: finite differences and the Neumann Poisson solver
//! - [`deformation`]: monitor functions, velocity construction, map flow
//! - [`recovery`]: reconstruct a map from its Jacobian determinant and curl
//! - [`preprocess`]: Gaussian subtraction, z-scores, CLAHE
//! - [`features`]: JD/CV extraction, channel stacks, tiling
//! - [`metrics`]: Dice, Hausdorff distance, absolute volume difference
//! - [`phantom`]: synthetic brain phantom for demos and tests

pub mod deformation;
pub mod error;
pub mod features;
pub mod field;
pub mod metrics;
pub mod nifti;
pub mod numerics;
pub mod phantom;
pub mod preprocess;
pub mod recovery;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{DiffeoMap, LabelVolume, LatticeGeometry, ScalarField, VectorField};
