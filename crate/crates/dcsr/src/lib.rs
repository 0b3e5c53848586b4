//! Correction and super-resolution of biased 1D field data with score-based
//! diffusion models.
//!
//! The toolkit corrects low-fidelity data with an enhanced SDEdit based on an
//! imbalanced perturbation/denoising schedule, then upsamples the corrected
//! fields through a cascade of conditional diffusion models. A 1D advection
//! data lab and closed-form score oracles back every numerical component with
//! independent checks.

pub mod correction;
pub mod datagen;
pub mod grid;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod score;
pub mod sde;
pub mod seeds;

mod error;

pub use error::{Error, Result};
