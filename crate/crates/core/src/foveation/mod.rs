//! Gaze fixations, patch-grid geometry and peripheral degradation.

mod blur;
mod fixation;
mod image;

pub use blur::{blur_resample, blurred_side, resize};
pub use fixation::{
    build_fixation_mask, fixation_to_patch_index, sample_random_fixations, Fixation,
    FixationMask, FixationSequence, FixationSource, GridGeometry, FIXATION_COUNTS,
};
pub use image::{pad_to_square, ImageBuffer};

/// Peripheral blur scales used during training.
pub const BLUR_SCALES: [f64; 5] = [0.0625, 0.125, 0.25, 0.5, 1.0];

/// Blur scale used for behavioural trials.
pub const EXPERIMENT_BLUR_SCALE: f64 = 0.25;
