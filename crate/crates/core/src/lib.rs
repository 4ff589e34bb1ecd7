//! Sketch-guided 2D smoke simulation and the data pipeline behind it.
//!
//! * [`field`] grid containers, sampling, `.dsfld` rasters and PNG I/O
//! * [`solver`] MAC-grid smoke solver (semi-Lagrangian / MacCormack, pressure projection)
//! * [`ftle`] flow maps and finite-time Lyapunov exponents
//! * [`lcs`] Gaussian pre-filter and two-component GMM thresholding
//! * [`skeleton`] heat-equation skeletons for synthetic sketches
//! * [`dataset`] randomized scenarios and the paired dataset writer
//! * [`guide`] sketch documents and guide-field providers
//! * [`guided`] guiding force and guided stepping

pub mod dataset;
pub mod field;
pub mod ftle;
pub mod guide;
pub mod guided;
pub mod lcs;
pub mod skeleton;
pub mod solver;

pub use field::{GridSpec, Jacobian2x2, MaskField, ScalarField, Vec2, VectorField, VelocityField};
