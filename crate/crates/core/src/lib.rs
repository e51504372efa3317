//! Restoration of directional images with the L²-DTGV² variational model.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] – pixel grids, vector and symmetric-tensor fields, inner products, PSNR.
//! * [`diffops`] – forward/backward finite differences and their directional variants.
//! * [`regularizers`] – TV, DTV, TGV² and DTGV² energies and ball projections.
//! * [`forward`] – degradation operators, noise synthesis and test phantoms.
//! * [`direction`] – estimation of the dominant texture orientation of an image.
//! * [`solver`] – Chambolle–Pock primal-dual iterations and operator-norm estimation.
//!
//! Per-pixel loops run on rayon when the `parallel` feature is enabled (the
//! default). Every reduction uses a fixed chunking, so results are bitwise
//! identical with and without the feature and for any thread count.

pub mod diffops;
pub mod direction;
mod error;
pub mod forward;
pub mod grid;
pub mod par;
pub mod regularizers;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{DirectionParams, Field, ImageGrid, SymTensorField, VectorField};
