//! Pixel-space denoising diffusion conditioned on foveal and peripheral tokens.

mod model;
mod sample;
mod schedule;
mod train;
mod unet;

pub use model::{file_sha256, sha256_hex, Checkpoint, Model, ModelConfig, CHECKPOINT_VERSION};
pub use sample::{
    ddim_from, ddim_invert, ddim_sample, ddim_sample_tokens, ddim_timesteps, generate_from_trial,
    guidance_combine, Generation, GenerationCondition, GenerationMeta, GuidanceMode, SamplerConfig,
    DEFAULT_TRIAL_BLUR,
};
pub use schedule::{forward_noise, NoiseSchedule};
pub use train::{TrainConfig, TrainExample, Trainer};
pub use unet::{patchify, unpatchify, Denoiser, DenoiserConfig};
