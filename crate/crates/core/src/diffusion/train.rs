use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{draw_dropout, Lambdas, P_DROP_FOVEAL, P_DROP_PERIPHERAL};
use crate::data::SyntheticScenes;
use crate::error::{Error, Result};
use crate::foveation::{sample_random_fixations, FixationSequence, ImageBuffer, BLUR_SCALES, FIXATION_COUNTS};
use crate::par::{self, ExecMode};
use crate::seeds;
use crate::tensor::{AdamW, AdamWConfig, Gradients, Mat, Tape};

use super::model::{Checkpoint, Model};
use super::schedule::forward_noise;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub fixation_counts: Vec<usize>,
    pub blur_scales: Vec<f64>,
    pub p_drop_foveal: f64,
    pub p_drop_peripheral: f64,
    pub seed: u64,
    pub dataset: SyntheticScenes,
    #[serde(default)]
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            fixation_counts: FIXATION_COUNTS.to_vec(),
            blur_scales: BLUR_SCALES.to_vec(),
            p_drop_foveal: P_DROP_FOVEAL,
            p_drop_peripheral: P_DROP_PERIPHERAL,
            seed: 0,
            dataset: SyntheticScenes::new(0, 5000, 64),
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.fixation_counts.is_empty() || self.blur_scales.is_empty() {
            return Err(Error::Config("fixation-count and blur-scale sets must be non-empty".into()));
        }
        if self.dataset.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        for p in [self.p_drop_foveal, self.p_drop_peripheral] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One training stimulus.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: ImageBuffer,
    pub fixations: FixationSequence,
    pub blur_scale: f64,
}

/// Owns the model being trained and its optimiser state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.optimizer, &model.store);
        Ok(Self {
            model,
            optimizer,
            config,
            step: 0,
        })
    }

    /// Resumes from a checkpoint carrying optimiser state.
    pub fn resume(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimiser state to resume from".into()))?;
        Ok(Self {
            model: ck.model,
            optimizer,
            config,
            step: ck.train_step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            train_step: self.step,
        }
    }

    /// Batch for `step`, fully determined by the seed and the step index.
    pub fn sample_batch(&self, step: u64) -> Result<Vec<TrainExample>> {
        let side = self.model.image_side();
        let patch = self.model.config.encoder.patch_size;
        (0..self.config.batch_size)
            .map(|i| {
                let mut rng = seeds::rng(self.config.seed, &[0xba7c, step, i as u64]);
                let index = rng.random_range(0..self.config.dataset.len());
                let count = self.config.fixation_counts[rng.random_range(0..self.config.fixation_counts.len())];
                let blur_scale = self.config.blur_scales[rng.random_range(0..self.config.blur_scales.len())];
                let fix_seed = rng.random::<u64>();
                Ok(TrainExample {
                    image: self.config.dataset.image(index),
                    fixations: sample_random_fixations(count, side, patch, fix_seed)?,
                    blur_scale,
                })
            })
            .collect()
    }

    /// Loss and gradient of one example; all randomness comes from
    /// `(seed, step, index)`.
    fn example_grad(&self, ex: &TrainExample, step: u64, index: usize) -> Result<(f64, Gradients)> {
        let model = &self.model;
        let mut rng = seeds::rng(self.config.seed, &[0x7a1e, step, index as u64]);
        let keep = draw_dropout(self.config.p_drop_foveal, self.config.p_drop_peripheral, &mut rng)?;
        let t = rng.random_range(0..model.schedule.timesteps);
        let x0 = model.to_tokens(&ex.image)?;
        let noise = Mat::from_vec(
            x0.rows(),
            x0.cols(),
            (0..x0.data().len()).map(|_| rng.sample(StandardNormal)).collect(),
        );
        let x_t = forward_noise(&x0, t, &noise, &model.schedule)?;
        let fov = keep.foveal.then(|| model.foveal_grid(&ex.image, &ex.fixations)).transpose()?;
        let per = keep
            .peripheral
            .then(|| model.peripheral_grid(&ex.image, ex.blur_scale))
            .transpose()?;
        let mut tape = Tape::training(&model.store);
        let conds = model
            .conditioner
            .vars(&mut tape, fov.as_ref(), per.as_ref(), Lambdas::TRAINING)?;
        let xv = tape.constant(x_t);
        let eps = model.denoiser.forward(&mut tape, xv, t, &conds)?;
        let loss = tape.mse_against(eps, noise);
        let value = tape.value(loss).get(0, 0);
        Ok((value, tape.backward(loss)))
    }

    /// One optimiser step on `batch`; returns the mean loss. A non-finite
    /// loss leaves the weights untouched and returns a numeric error.
    pub fn training_step(&mut self, batch: &[TrainExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch".into()));
        }
        let step = self.step;
        let results = par::map_range(self.config.exec, batch.len(), |i| self.example_grad(&batch[i], step, i));
        let mut grads = Gradients::empty(self.model.store.len());
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.merge(&g);
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at step {step}")));
        }
        grads.scale(1.0 / n);
        self.optimizer.update(&mut self.model.store, &grads);
        self.step += 1;
        Ok(loss)
    }

    /// Runs `steps` steps, reporting each loss to `on_step`.
    pub fn run(&mut self, steps: usize, mut on_step: impl FnMut(u64, f64)) -> Result<()> {
        for _ in 0..steps {
            let batch = self.sample_batch(self.step)?;
            let s = self.step;
            let loss = self.training_step(&batch)?;
            on_step(s, loss);
        }
        Ok(())
    }
}
