use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PatchTokenGrid;
use crate::error::{Error, Result};
use crate::tensor::nn::{Init, LayerNorm, Linear};
use crate::tensor::{Mat, ParamId, ParamStore, Tape, Var};

use super::attention::{perceiver_attention_var, AttentionWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    /// Number of learned latent queries (output tokens).
    pub num_latents: usize,
    pub layers: usize,
    /// Internal width `d`.
    pub dim: usize,
    /// Query/key width `d_k`.
    pub key_dim: usize,
    pub heads: usize,
    /// Width of the incoming patch tokens.
    pub input_dim: usize,
    /// Width of the emitted conditioning tokens.
    pub output_dim: usize,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        Self {
            num_latents: 32,
            layers: 8,
            dim: 32,
            key_dim: 32,
            heads: 4,
            input_dim: 32,
            output_dim: 32,
        }
    }
}

impl ResamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_latents == 0 || self.dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("resampler widths must be positive".into()));
        }
        if self.heads == 0 || self.key_dim % self.heads != 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide key width {} and width {}",
                self.heads, self.key_dim, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResamplerLayer {
    norm_media: LayerNorm,
    norm_latents: LayerNorm,
    attn: AttentionWeights,
    attn_out: Linear,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Compresses a variable number of patch tokens into a fixed set of
/// `num_latents` conditioning tokens.
#[derive(Clone, Debug)]
pub struct Resampler {
    config: ResamplerConfig,
    input: Linear,
    latents: ParamId,
    layers: Vec<ResamplerLayer>,
    output: Linear,
    out_norm: LayerNorm,
}

impl Resampler {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: ResamplerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let input = Linear::new(store, &format!("{name}.in"), config.input_dim, d, true, Init::FanIn, rng);
        let latents = store.add(
            format!("{name}.latents"),
            Mat::randn(config.num_latents, d, (d as f64).powf(-0.5), rng),
        );
        let layers = (0..config.layers)
            .map(|i| {
                let p = format!("{name}.layer{i}");
                ResamplerLayer {
                    norm_media: LayerNorm::new(store, &format!("{p}.norm_media"), d),
                    norm_latents: LayerNorm::new(store, &format!("{p}.norm_latents"), d),
                    attn: AttentionWeights::new(store, &format!("{p}.attn"), d, config.key_dim, rng),
                    attn_out: Linear::new(store, &format!("{p}.attn_out"), d, d, false, Init::FanIn, rng),
                    norm_ff: LayerNorm::new(store, &format!("{p}.norm_ff"), d),
                    ff_in: Linear::new(store, &format!("{p}.ff_in"), d, 2 * d, true, Init::FanIn, rng),
                    ff_out: Linear::new(store, &format!("{p}.ff_out"), 2 * d, d, true, Init::FanIn, rng),
                }
            })
            .collect();
        let output = Linear::new(store, &format!("{name}.out"), d, config.output_dim, true, Init::FanIn, rng);
        let out_norm = LayerNorm::new(store, &format!("{name}.out_norm"), config.output_dim);
        Ok(Self {
            config,
            input,
            latents,
            layers,
            output,
            out_norm,
        })
    }

    pub fn config(&self) -> &ResamplerConfig {
        &self.config
    }

    /// Runs the resampler over `tokens: N×input_dim` (N may be zero).
    pub fn forward(&self, tape: &mut Tape, tokens: &Mat) -> Var {
        let x = (tokens.rows() > 0).then(|| {
            let t = tape.constant(tokens.clone());
            self.input.forward(tape, t)
        });
        let mut lat = tape.param(self.latents);
        for layer in &self.layers {
            let xn = x.map(|x| layer.norm_media.forward(tape, x));
            let ln = layer.norm_latents.forward(tape, lat);
            let a = perceiver_attention_var(tape, xn, ln, &layer.attn, self.config.heads);
            let a = layer.attn_out.forward(tape, a);
            lat = tape.add(lat, a);
            let h = layer.norm_ff.forward(tape, lat);
            let h = layer.ff_in.forward(tape, h);
            let h = tape.silu(h);
            let h = layer.ff_out.forward(tape, h);
            lat = tape.add(lat, h);
        }
        let out = self.output.forward(tape, lat);
        self.out_norm.forward(tape, out)
    }

    /// Resamples a token grid. Exactly-zero tokens (masked patches) are not
    /// attended to, so the output depends only on the retained tokens.
    pub fn forward_grid(&self, tape: &mut Tape, grid: &PatchTokenGrid) -> Result<Var> {
        if grid.dim() != self.config.input_dim {
            return Err(Error::geometry(format!(
                "grid tokens have width {}, resampler expects {}",
                grid.dim(),
                self.config.input_dim
            )));
        }
        Ok(self.forward(tape, &grid.nonzero_tokens()))
    }

    /// `num_latents × output_dim` conditioning tokens for `grid`.
    pub fn resample(&self, store: &ParamStore, grid: &PatchTokenGrid) -> Result<Mat> {
        let mut tape = Tape::inference(store);
        let v = self.forward_grid(&mut tape, grid)?;
        Ok(tape.value(v).clone())
    }
}
