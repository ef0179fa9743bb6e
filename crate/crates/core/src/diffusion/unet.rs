use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{dual_cross_attention_var, CondVars, ProjectionBank, Stream};
use crate::error::{Error, Result};
use crate::tensor::nn::{multi_head_attention, Init, LayerNorm, Linear};
use crate::tensor::{Mat, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_side: usize,
    /// Pixels per side folded into one token by the stem.
    pub patch: usize,
    /// Channels at the full and half token resolutions.
    pub channels: [usize; 2],
    pub heads: usize,
    pub time_dim: usize,
    /// Width of the conditioning tokens.
    pub context_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            patch: 4,
            channels: [32, 64],
            heads: 4,
            time_dim: 32,
            context_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_side % self.patch != 0 {
            return Err(Error::Config(format!(
                "patch {} must divide image side {}",
                self.patch, self.image_side
            )));
        }
        if self.grid() % 2 != 0 {
            return Err(Error::Config(format!(
                "token grid {} must be divisible by 2 for the down block",
                self.grid()
            )));
        }
        if self.heads == 0 || self.channels.iter().any(|c| c % self.heads != 0) {
            return Err(Error::Config("heads must divide every channel width".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time embedding width must be even".into()));
        }
        Ok(())
    }

    /// Token grid side at full resolution.
    pub fn grid(&self) -> usize {
        self.image_side / self.patch
    }

    /// Values per token: `3·patch²`.
    pub fn token_width(&self) -> usize {
        3 * self.patch * self.patch
    }
}

/// Folds an `S×S` RGB image in `[-1, 1]` (row-major HWC slice) into
/// `(S/p)² × 3p²` tokens.
pub fn patchify(pixels: &[f64], side: usize, patch: usize) -> Mat {
    let g = side / patch;
    let w = 3 * patch * patch;
    let mut out = Mat::zeros(g * g, w);
    for gy in 0..g {
        for gx in 0..g {
            let row = out.row_mut(gy * g + gx);
            let mut k = 0;
            for y in 0..patch {
                let src = ((gy * patch + y) * side + gx * patch) * 3;
                row[k..k + 3 * patch].copy_from_slice(&pixels[src..src + 3 * patch]);
                k += 3 * patch;
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Mat, side: usize, patch: usize) -> Vec<f64> {
    let g = side / patch;
    let mut out = vec![0.0; side * side * 3];
    for gy in 0..g {
        for gx in 0..g {
            let row = tokens.row(gy * g + gx);
            let mut k = 0;
            for y in 0..patch {
                let dst = ((gy * patch + y) * side + gx * patch) * 3;
                out[dst..dst + 3 * patch].copy_from_slice(&row[k..k + 3 * patch]);
                k += 3 * patch;
            }
        }
    }
    out
}

fn sinusoid(pos: f64, dim: usize, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        v[i] = (pos * freq).sin();
        v[half + i] = (pos * freq).cos();
    }
    v
}

/// Fixed 2-D sinusoidal code for a `g×g` token grid, `g² × c`.
fn grid_position_code(g: usize, c: usize) -> Mat {
    let half = c / 2;
    let mut m = Mat::zeros(g * g, c);
    for y in 0..g {
        for x in 0..g {
            let row = m.row_mut(y * g + x);
            row[..half].copy_from_slice(&sinusoid(y as f64, half, 100.0));
            row[half..2 * half].copy_from_slice(&sinusoid(x as f64, half, 100.0));
        }
    }
    m
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: LayerNorm,
    conv1: Linear,
    time: Linear,
    norm2: LayerNorm,
    conv2: Linear,
    skip: Option<Linear>,
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        time_width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c_in),
            conv1: Linear::new(store, &format!("{name}.conv1"), 9 * c_in, c_out, true, Init::FanIn, rng),
            time: Linear::new(store, &format!("{name}.time"), time_width, c_out, true, Init::FanIn, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c_out),
            conv2: Linear::new(store, &format!("{name}.conv2"), 9 * c_out, c_out, true, Init::FanIn, rng),
            skip: (c_in != c_out)
                .then(|| Linear::new(store, &format!("{name}.skip"), c_in, c_out, false, Init::FanIn, rng)),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var, temb: Var, side: usize) -> Var {
        let h = self.norm1.forward(tape, x);
        let h = tape.silu(h);
        let h = tape.im2col3(h, side, side);
        let h = self.conv1.forward(tape, h);
        let t = self.time.forward(tape, temb);
        let h = tape.add_row(h, t);
        let h = self.norm2.forward(tape, h);
        let h = tape.silu(h);
        let h = tape.im2col3(h, side, side);
        let h = self.conv2.forward(tape, h);
        let s = match &self.skip {
            Some(l) => l.forward(tape, x),
            None => x,
        };
        tape.add(s, h)
    }
}

#[derive(Clone, Debug)]
struct SelfAttention {
    norm: LayerNorm,
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let c = tape.shape(x).1;
        let h = self.norm.forward(tape, x);
        let qkv = self.qkv.forward(tape, h);
        let q = tape.slice_cols(qkv, 0, c);
        let k = tape.slice_cols(qkv, c, c);
        let v = tape.slice_cols(qkv, 2 * c, c);
        let a = multi_head_attention(tape, q, k, v, self.heads);
        let a = self.out.forward(tape, a);
        tape.add(x, a)
    }
}

#[derive(Clone, Debug)]
struct CrossBlock {
    norm: LayerNorm,
    site: usize,
    out: Linear,
}

/// Small UNet-style noise predictor over patch tokens: a full-resolution
/// level, a half-resolution middle with self-attention, and a skip-connected
/// up level. Every block is followed by dual-stream cross-attention.
#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    stem: Linear,
    time1: Linear,
    time2: Linear,
    down: ResBlock,
    mid1: ResBlock,
    mid_attn: SelfAttention,
    mid2: ResBlock,
    up: ResBlock,
    cross: [CrossBlock; 4],
    head_norm: LayerNorm,
    head: Linear,
    /// Linear path from the noisy input to the prediction; the token width
    /// exceeds the first level's channel count.
    input_skip: Linear,
    bank: ProjectionBank,
    position: Mat,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [c1, c2] = config.channels;
        let tw = 2 * config.time_dim;
        let mut bank = ProjectionBank::new();
        let mut cross = |store: &mut ParamStore, name: &str, c: usize, rng: &mut R| CrossBlock {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            site: bank.add_site(store, name, c, config.context_dim, config.heads, &Stream::ALL, rng),
            out: Linear::new(store, &format!("{name}.out"), c, c, true, Init::FanIn, rng),
        };
        let cross = [
            cross(store, "unet.cross_down", c1, rng),
            cross(store, "unet.cross_mid1", c2, rng),
            cross(store, "unet.cross_mid2", c2, rng),
            cross(store, "unet.cross_up", c1, rng),
        ];
        Ok(Self {
            config,
            stem: Linear::new(store, "unet.stem", config.token_width(), c1, true, Init::FanIn, rng),
            time1: Linear::new(store, "unet.time1", config.time_dim, tw, true, Init::FanIn, rng),
            time2: Linear::new(store, "unet.time2", tw, tw, true, Init::FanIn, rng),
            down: ResBlock::new(store, "unet.down", c1, c1, tw, rng),
            mid1: ResBlock::new(store, "unet.mid1", c1, c2, tw, rng),
            mid_attn: SelfAttention {
                norm: LayerNorm::new(store, "unet.mid_attn.norm", c2),
                qkv: Linear::new(store, "unet.mid_attn.qkv", c2, 3 * c2, false, Init::FanIn, rng),
                out: Linear::new(store, "unet.mid_attn.out", c2, c2, true, Init::FanIn, rng),
                heads: config.heads,
            },
            mid2: ResBlock::new(store, "unet.mid2", c2, c2, tw, rng),
            up: ResBlock::new(store, "unet.up", c2 + c1, c1, tw, rng),
            cross,
            head_norm: LayerNorm::new(store, "unet.head_norm", c1),
            head: Linear::new(store, "unet.head", c1, config.token_width(), true, Init::Zeros, rng),
            input_skip: Linear::new(store, "unet.input_skip", config.token_width(), config.token_width(), false, Init::Zeros, rng),
            bank,
            position: grid_position_code(config.grid(), c1),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn bank(&self) -> &ProjectionBank {
        &self.bank
    }

    fn cross(&self, tape: &mut Tape, i: usize, x: Var, conds: &CondVars) -> Result<Var> {
        let block = &self.cross[i];
        let h = block.norm.forward(tape, x);
        let a = dual_cross_attention_var(tape, h, conds, self.bank.site(block.site)?)?;
        let a = block.out.forward(tape, a);
        Ok(tape.add(x, a))
    }

    /// Predicts the noise in `x_t` (patch tokens, `grid² × 3p²`) at step `t`.
    pub fn forward(&self, tape: &mut Tape, x_t: Var, t: usize, conds: &CondVars) -> Result<Var> {
        let g = self.config.grid();
        if tape.shape(x_t) != (g * g, self.config.token_width()) {
            return Err(Error::geometry(format!(
                "denoiser input must be {}x{}, got {:?}",
                g * g,
                self.config.token_width(),
                tape.shape(x_t)
            )));
        }
        let te = tape.constant(Mat::from_vec(1, self.config.time_dim, sinusoid(t as f64, self.config.time_dim, 10_000.0)));
        let te = self.time1.forward(tape, te);
        let te = tape.silu(te);
        let te = self.time2.forward(tape, te);
        let te = tape.silu(te);

        let h = self.stem.forward(tape, x_t);
        let pos = tape.constant(self.position.clone());
        let h = tape.add(h, pos);
        let h = self.down.forward(tape, h, te, g);
        let skip = self.cross(tape, 0, h, conds)?;

        let half = g / 2;
        let h = tape.avg_pool2(skip, g, g);
        let h = self.mid1.forward(tape, h, te, half);
        let h = self.mid_attn.forward(tape, h);
        let h = self.cross(tape, 1, h, conds)?;
        let h = self.mid2.forward(tape, h, te, half);
        let h = self.cross(tape, 2, h, conds)?;

        let h = tape.upsample2(h, half, half);
        let h = tape.concat_cols(&[h, skip]);
        let h = self.up.forward(tape, h, te, g);
        let h = self.cross(tape, 3, h, conds)?;

        let h = self.head_norm.forward(tape, h);
        let h = tape.silu(h);
        let out = self.head.forward(tape, h);
        let skip = self.input_skip.forward(tape, x_t);
        Ok(tape.add(out, skip))
    }
}
