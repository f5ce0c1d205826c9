//! Dictionary-learned spherical polar Fourier imaging.
//!
//! Continuous q-space diffusion signals are expanded in the SPF basis
//! (Gaussian-Laguerre radial functions times even-degree real spherical
//! harmonics). A dictionary learned over SPF coefficients of single-tensor
//! signals sparsifies them, and undersampled measurements are reconstructed by
//! a weighted LASSO over dictionary coefficients at a per-voxel adaptive scale,
//! with E(0) = 1 built into the estimator.

pub mod dictionary;
pub mod error;
pub mod eval;
pub mod io;
pub mod parallel;
pub mod phantom;
pub mod projection;
pub mod reconstruct;
pub mod scheme;
pub mod solver;
pub mod spf_basis;

pub use error::{Error, Result};
