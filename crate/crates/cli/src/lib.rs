//! Manifest-driven runs of the neural-field inversion toolkit: scenario
//! construction, both inversion methods, SVD analysis, CSV/PNG exports.

pub mod error;
pub mod io;
pub mod manifest;
pub mod render;
pub mod run;

pub use error::CliError;
