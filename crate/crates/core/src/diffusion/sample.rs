use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ActiveStreams, ConditioningSet, Lambdas};
use crate::error::{Error, Result};
use crate::foveation::{FixationSequence, ImageBuffer, EXPERIMENT_BLUR_SCALE};
use crate::seeds;
use crate::tensor::Mat;

use super::model::Model;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// Guided noise drives both the clean-image estimate and re-noising.
    Cfg,
    /// Guided noise drives the clean-image estimate; the unconditional
    /// prediction re-noises.
    #[default]
    CfgPlusPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    /// `w = 1` takes the clean-image estimate from the conditional model alone.
    pub guidance: f64,
    pub mode: GuidanceMode,
    pub lambdas: Lambdas,
    pub seed: u64,
    /// Clamp each clean-image estimate to `[-1, 1]`.
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 1.0,
            mode: GuidanceMode::CfgPlusPlus,
            lambdas: Lambdas::INFERENCE,
            seed: 0,
            clip_x0: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.steps == 0 || self.steps > timesteps {
            return Err(Error::Config(format!(
                "sampler steps {} must be in [1, {timesteps}]",
                self.steps
            )));
        }
        if !(self.guidance >= 0.0) {
            return Err(Error::Config(format!("guidance scale {} must be >= 0", self.guidance)));
        }
        self.lambdas.validate()
    }
}

/// `ε̃ = ε_u + w·(ε_c − ε_u)`
pub fn guidance_combine(eps_cond: &Mat, eps_uncond: &Mat, w: f64) -> Mat {
    eps_cond.zip_map(eps_uncond, |c, u| u + w * (c - u))
}

/// Descending DDIM timesteps with even spacing `T / steps`.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Vec<usize> {
    let ratio = timesteps / steps;
    (0..steps).rev().map(|i| i * ratio).collect()
}

fn initial_noise(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = seeds::rng(seed, &[0xdd1a]);
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// Deterministic (η = 0) reverse trajectory from `x_t` (patch tokens).
pub fn ddim_from(model: &Model, x_start: Mat, conds: &ConditioningSet, sc: &SamplerConfig) -> Result<Mat> {
    let sched = &model.schedule;
    sc.validate(sched.timesteps)?;
    let ts = ddim_timesteps(sched.timesteps, sc.steps);
    let ratio = sched.timesteps / sc.steps;
    // plain CFG at w = 1 never reads the unconditional prediction
    let guided = !(sc.guidance == 1.0 && sc.mode == GuidanceMode::Cfg);
    let uncond = guided.then(|| model.unconditional(conds));
    let mut x = x_start;
    for &t in &ts {
        let eps_c = model.predict_noise(&x, t, conds)?;
        let (eps_x0, eps_dir) = match &uncond {
            Some(u) => {
                let eps_u = model.predict_noise(&x, t, u)?;
                let g = guidance_combine(&eps_c, &eps_u, sc.guidance);
                match sc.mode {
                    GuidanceMode::Cfg => (g.clone(), g),
                    GuidanceMode::CfgPlusPlus => (g, eps_u),
                }
            }
            None => (eps_c.clone(), eps_c),
        };
        let ab = sched.alpha_bar(t);
        let ab_prev = if t >= ratio { sched.alpha_bar(t - ratio) } else { 1.0 };
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut x0 = x.zip_map(&eps_x0, |xv, e| (xv - sb * e) / sa);
        if sc.clip_x0 {
            x0 = x0.map(|v| v.clamp(-1.0, 1.0));
        }
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        x = x0.zip_map(&eps_dir, |x0v, e| pa * x0v + pb * e);
    }
    if !x.is_finite() {
        return Err(Error::Numeric("sampler diverged".into()));
    }
    Ok(x)
}

/// Generates patch tokens from seeded Gaussian noise.
pub fn ddim_sample_tokens(model: &Model, conds: &ConditioningSet, sc: &SamplerConfig) -> Result<Mat> {
    let d = model.config.denoiser;
    let noise = initial_noise(d.grid() * d.grid(), d.token_width(), sc.seed);
    ddim_from(model, noise, conds, sc)
}

/// Generates one image in `[0, 1]`.
pub fn ddim_sample(model: &Model, conds: &ConditioningSet, sc: &SamplerConfig) -> Result<ImageBuffer> {
    Ok(model.to_image(&ddim_sample_tokens(model, conds, sc)?))
}

/// Deterministic DDIM encoding of clean tokens `x0` to the noise level of the
/// first sampling step (conditional predictions only).
pub fn ddim_invert(model: &Model, x0: &Mat, conds: &ConditioningSet, steps: usize) -> Result<Mat> {
    let sched = &model.schedule;
    if steps == 0 || steps > sched.timesteps {
        return Err(Error::Config(format!("inversion steps {steps} out of range")));
    }
    let ratio = sched.timesteps / steps;
    let mut ts = ddim_timesteps(sched.timesteps, steps);
    ts.reverse();
    let mut x = x0.clone();
    for &t in &ts {
        let eps = model.predict_noise(&x, t, conds)?;
        let ab_prev = if t >= ratio { sched.alpha_bar(t - ratio) } else { 1.0 };
        let ab = sched.alpha_bar(t);
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        let clean = x.zip_map(&eps, |xv, e| (xv - pb * e) / pa);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        x = clean.zip_map(&eps, |c, e| sa * c + sb * e);
    }
    Ok(x)
}

/// Which image streams a generated probe is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationCondition {
    Full,
    FovealOnly,
    PeripheralOnly,
}

impl GenerationCondition {
    pub fn active(self) -> ActiveStreams {
        match self {
            GenerationCondition::Full => ActiveStreams::BOTH,
            GenerationCondition::FovealOnly => ActiveStreams {
                foveal: true,
                peripheral: false,
            },
            GenerationCondition::PeripheralOnly => ActiveStreams {
                foveal: false,
                peripheral: true,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub condition: GenerationCondition,
    pub active: ActiveStreams,
    pub lambdas: Lambdas,
    pub blur_scale: f64,
    pub seed: u64,
    pub steps: usize,
    pub guidance: f64,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub image: ImageBuffer,
    pub meta: GenerationMeta,
}

/// Blur scale used for experiment probes unless overridden.
pub const DEFAULT_TRIAL_BLUR: f64 = EXPERIMENT_BLUR_SCALE;

/// Builds the conditioning for one stimulus and samples a probe image.
pub fn generate_from_trial(
    model: &Model,
    img: &ImageBuffer,
    fixes: &FixationSequence,
    blur_scale: f64,
    condition: GenerationCondition,
    sc: &SamplerConfig,
) -> Result<Generation> {
    let active = condition.active();
    let fov = active.foveal.then(|| model.foveal_grid(img, fixes)).transpose()?;
    let per = active
        .peripheral
        .then(|| model.peripheral_grid(img, blur_scale))
        .transpose()?;
    let conds = model.conditioning(fov.as_ref(), per.as_ref(), sc.lambdas)?;
    let image = ddim_sample(model, &conds, sc)?;
    Ok(Generation {
        image,
        meta: GenerationMeta {
            condition,
            active: conds.active,
            lambdas: sc.lambdas,
            blur_scale,
            seed: sc.seed,
            steps: sc.steps,
            guidance: sc.guidance,
        },
    })
}
