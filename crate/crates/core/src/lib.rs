//! Spiky-smooth kernel regression and the matching two-layer networks.
//!
//! * [`kernels`]: kernel families, kernel matrices, dot-product Taylor coefficients.
//! * [`estimators`]: gradient flow / ridge / ridgeless kernel regression.
//! * [`activations`]: Hermite-series activation functions induced by dot-product kernels.
//! * [`networks`]: two-layer networks in NTK parametrization with additive activations.
//! * [`spectra`]: convolution kernels and the spectral excess-risk lower bound.
//! * [`synthdata`]: seeded synthetic data on spheres.
//! * [`experiments`]: end-to-end experiment drivers used by the CLI.

pub mod activations;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod kernels;
pub mod linalg;
pub mod networks;
pub mod seeding;
pub mod spectra;
pub mod synthdata;

pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use linalg::Points;

/// Library version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
