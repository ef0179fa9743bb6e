//! Fixation-conditioned scene generation.
//!
//! A scene is reconstructed from a heavily blurred periphery plus a handful
//! of high-resolution patch tokens at the locations a viewer fixated. The
//! crate covers foveation, patch encoding, token resampling, a small
//! pixel-space diffusion model, image metrics and the statistics used to
//! analyse human same/different judgements.

pub mod analysis;
pub mod conditioning;
pub mod data;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod foveation;
pub mod metrics;
pub mod par;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
