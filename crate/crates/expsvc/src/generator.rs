use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use fovea_core::analysis::Condition;
use fovea_core::data::SyntheticScenes;
use fovea_core::diffusion::{generate_from_trial, GenerationCondition, Model, SamplerConfig, DEFAULT_TRIAL_BLUR};
use fovea_core::foveation::{FixationSequence, ImageBuffer};
use fovea_core::{Error, Result};

/// Stimulus images addressed by id.
pub trait StimulusSource: Send + Sync {
    fn len(&self) -> usize;
    fn image(&self, id: usize) -> Result<ImageBuffer>;
}

/// Procedural scenes, ids offset into the generator's index space.
#[derive(Clone, Debug)]
pub struct SyntheticStimuli {
    pub scenes: SyntheticScenes,
    pub offset: usize,
    pub count: usize,
}

impl StimulusSource for SyntheticStimuli {
    fn len(&self) -> usize {
        self.count
    }

    fn image(&self, id: usize) -> Result<ImageBuffer> {
        if id >= self.count || self.offset + id >= self.scenes.len() {
            return Err(Error::Config(format!("unknown stimulus {id}")));
        }
        Ok(self.scenes.image(self.offset + id))
    }
}

/// PNG files in a directory, ids following sorted file names.
#[derive(Clone, Debug)]
pub struct PngDirectory {
    files: Vec<PathBuf>,
}

impl PngDirectory {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        Ok(Self { files })
    }
}

impl StimulusSource for PngDirectory {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn image(&self, id: usize) -> Result<ImageBuffer> {
        let path = self.files.get(id).ok_or_else(|| Error::Config(format!("unknown stimulus {id}")))?;
        Ok(fovea_core::foveation::pad_to_square(&ImageBuffer::load_png(path)?))
    }
}

/// Settings that, with the checkpoint, fully determine a generated probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub checkpoint_sha256: Option<String>,
    pub sampler: SamplerConfig,
    pub blur_scale: f64,
    pub image_side: usize,
    pub patch_size: usize,
}

pub trait Generator: Send + Sync {
    fn info(&self) -> GeneratorInfo;
    /// Generates a probe for a non-original condition. `seed` replaces the
    /// sampler seed.
    fn generate(&self, stimulus: &ImageBuffer, fixations: &FixationSequence, condition: Condition, seed: u64)
        -> Result<ImageBuffer>;
}

pub struct ModelGenerator {
    model: Arc<Model>,
    sampler: SamplerConfig,
    blur_scale: f64,
    checkpoint_sha256: Option<String>,
}

impl ModelGenerator {
    pub fn new(model: Arc<Model>, sampler: SamplerConfig, checkpoint_sha256: Option<String>) -> Self {
        Self {
            model,
            sampler,
            blur_scale: DEFAULT_TRIAL_BLUR,
            checkpoint_sha256,
        }
    }

    pub fn with_blur(mut self, blur_scale: f64) -> Self {
        self.blur_scale = blur_scale;
        self
    }
}

pub fn generation_condition(condition: Condition) -> Option<GenerationCondition> {
    match condition {
        Condition::Original => None,
        Condition::OwnFixation | Condition::Random | Condition::Full => Some(GenerationCondition::Full),
        Condition::FovealOnly => Some(GenerationCondition::FovealOnly),
        Condition::PeripheralOnly => Some(GenerationCondition::PeripheralOnly),
    }
}

impl Generator for ModelGenerator {
    fn info(&self) -> GeneratorInfo {
        GeneratorInfo {
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            sampler: self.sampler.clone(),
            blur_scale: self.blur_scale,
            image_side: self.model.image_side(),
            patch_size: self.model.config.encoder.patch_size,
        }
    }

    fn generate(
        &self,
        stimulus: &ImageBuffer,
        fixations: &FixationSequence,
        condition: Condition,
        seed: u64,
    ) -> Result<ImageBuffer> {
        let gc = generation_condition(condition)
            .ok_or_else(|| Error::Config("original trials are not generated".into()))?;
        let sc = SamplerConfig {
            seed,
            ..self.sampler.clone()
        };
        Ok(generate_from_trial(&self.model, stimulus, fixations, self.blur_scale, gc, &sc)?.image)
    }
}
