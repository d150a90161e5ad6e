//! Generalized (Tsallis) mutual information for volumetric image registration.
//!
//! The crate covers the whole evaluation pipeline: volume I/O and intensity
//! preparation, synthetic multimodal phantoms, separable affine transform
//! families, resampling, the Shannon/Tsallis mutual-information family,
//! dense metric landscapes over transform-parameter cubes, flood-fill capture
//! simulation, a regular-step gradient optimizer and a reproducible Monte Carlo
//! registration harness.

pub mod capture;
pub mod error;
pub mod landscape;
pub mod metric;
pub mod montecarlo;
pub mod optimizer;
pub mod phantom;
pub mod resample;
pub mod rng;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
