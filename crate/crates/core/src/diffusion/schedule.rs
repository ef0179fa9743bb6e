use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Linear-β noise schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(skip)]
    betas: Vec<f64>,
    #[serde(skip)]
    alphas_cumprod: Vec<f64>,
}

// The derived tables are a cache; equality is over the defining fields.
impl PartialEq for NoiseSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.timesteps == other.timesteps && self.beta_start == other.beta_start && self.beta_end == other.beta_end
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config("schedule needs at least two timesteps".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64)
            .collect();
        let mut alphas_cumprod = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alphas_cumprod.push(acc);
        }
        Ok(Self {
            timesteps,
            beta_start,
            beta_end,
            betas,
            alphas_cumprod,
        })
    }

    /// Rebuilds the derived tables after deserialisation.
    pub fn rebuilt(&self) -> Result<Self> {
        Self::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.timesteps {
            return Err(Error::Config(format!(
                "timestep {t} outside [0, {})",
                self.timesteps
            )));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`
pub fn forward_noise(x0: &Mat, t: usize, noise: &Mat, sched: &NoiseSchedule) -> Result<Mat> {
    sched.check_t(t)?;
    if x0.shape() != noise.shape() {
        return Err(Error::geometry("x0 and noise shapes differ"));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(noise, |x, n| a * x + b * n))
}
