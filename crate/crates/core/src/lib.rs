//! Geophysical inversion with neural-field model parameterizations.
//!
//! The subsurface property model on a 2D tensor mesh is produced by a
//! coordinate MLP evaluated at every core cell; inversion searches the
//! network weights instead of the cell values. The crate ships two forward
//! problems (straight-ray cross-hole tomography, 2D DC resistivity),
//! conventional Tikhonov baselines, and SVD analysis of the weight Jacobian.

pub mod checkpoint;
pub mod dcr_forward;
pub mod encoding;
pub mod error;
pub mod inversion;
pub mod mesh;
pub mod neural_field;
pub mod scenarios;
pub mod seeds;
pub mod simulation;
pub mod sparse;
pub mod svd_analysis;
pub mod tomo_forward;

pub use error::{Error, Result};
