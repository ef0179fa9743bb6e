use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::{CondVars, Conditioner, ConditionerConfig, ConditioningSet, Lambdas};
use crate::encoder::{apply_mask, EncoderConfig, PatchTokenGrid, ToyEncoder};
use crate::error::{Error, Result};
use crate::foveation::{blur_resample, build_fixation_mask, FixationSequence, ImageBuffer};
use crate::seeds;
use crate::tensor::{AdamW, AdamWConfig, Mat, ParamStore, Tape};

use super::schedule::NoiseSchedule;
use super::unet::{patchify, unpatchify, Denoiser, DenoiserConfig};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub conditioner: ConditionerConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: NoiseSchedule,
    /// Seed for weight initialisation.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let denoiser = DenoiserConfig::default();
        Self {
            encoder,
            conditioner: ConditionerConfig {
                token_dim: encoder.dim,
                context_dim: denoiser.context_dim,
                ..Default::default()
            },
            denoiser,
            schedule: NoiseSchedule::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conditioner.token_dim != self.encoder.dim {
            return Err(Error::Config(format!(
                "conditioner expects {}-wide tokens but the encoder emits {}",
                self.conditioner.token_dim, self.encoder.dim
            )));
        }
        if self.conditioner.context_dim != self.denoiser.context_dim {
            return Err(Error::Config("conditioner and denoiser context widths differ".into()));
        }
        if self.denoiser.image_side % self.encoder.patch_size != 0 {
            return Err(Error::Config("encoder patch must divide the image side".into()));
        }
        self.denoiser.validate()
    }
}

/// Encoder, conditioner, denoiser and their weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: ToyEncoder,
    pub conditioner: Conditioner,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

/// Parameters plus optional optimiser state, as persisted on disk.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamW>,
    pub train_step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    train_step: u64,
    params: Vec<(String, usize, usize)>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(config.init_seed, &[0x1417]);
        let mut store = ParamStore::new();
        let encoder = ToyEncoder::new(config.encoder)?;
        let conditioner = Conditioner::new(&mut store, config.conditioner, &mut rng)?;
        let denoiser = Denoiser::new(&mut store, config.denoiser, &mut rng)?;
        let schedule = config.schedule.rebuilt()?;
        Ok(Self {
            config,
            store,
            encoder,
            conditioner,
            denoiser,
            schedule,
        })
    }

    pub fn image_side(&self) -> usize {
        self.config.denoiser.image_side
    }

    fn check_image(&self, img: &ImageBuffer) -> Result<()> {
        let s = self.image_side();
        if img.width() != s || img.height() != s {
            return Err(Error::geometry(format!(
                "model works on {s}x{s} images, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// Foveal grid (tokens kept at fixated patches only).
    pub fn foveal_grid(&self, img: &ImageBuffer, fixes: &FixationSequence) -> Result<PatchTokenGrid> {
        self.check_image(img)?;
        let grid = self.encoder.encode(img)?;
        let mask = build_fixation_mask(fixes, img.width(), self.config.encoder.patch_size)?;
        apply_mask(&grid, &mask)
    }

    /// Peripheral grid (tokens of the uniformly blurred scene).
    pub fn peripheral_grid(&self, img: &ImageBuffer, blur_scale: f64) -> Result<PatchTokenGrid> {
        self.check_image(img)?;
        self.encoder.encode(&blur_resample(img, blur_scale)?)
    }

    pub fn conditioning(
        &self,
        foveal: Option<&PatchTokenGrid>,
        peripheral: Option<&PatchTokenGrid>,
        lambdas: Lambdas,
    ) -> Result<ConditioningSet> {
        self.conditioner.build(&self.store, foveal, peripheral, lambdas)
    }

    pub fn unconditional(&self, conds: &ConditioningSet) -> ConditioningSet {
        self.conditioner.unconditional(&self.store, conds)
    }

    /// Noise prediction for patch tokens `x_t` at step `t`.
    pub fn predict_noise(&self, x_t: &Mat, t: usize, conds: &ConditioningSet) -> Result<Mat> {
        self.schedule.check_t(t)?;
        let mut tape = Tape::inference(&self.store);
        let x = tape.constant(x_t.clone());
        let c = CondVars::constant(&mut tape, conds);
        let out = self.denoiser.forward(&mut tape, x, t, &c)?;
        let eps = tape.value(out);
        if !eps.is_finite() {
            return Err(Error::Numeric(format!("denoiser produced non-finite output at t={t}")));
        }
        Ok(eps.clone())
    }

    /// `[0, 1]` image → model tokens in `[-1, 1]`.
    pub fn to_tokens(&self, img: &ImageBuffer) -> Result<Mat> {
        self.check_image(img)?;
        let px: Vec<f64> = img.pixels().iter().map(|v| 2.0 * v - 1.0).collect();
        Ok(patchify(&px, self.image_side(), self.config.denoiser.patch))
    }

    /// Model tokens → `[0, 1]` image (clipped).
    pub fn to_image(&self, tokens: &Mat) -> ImageBuffer {
        let s = self.image_side();
        let px = unpatchify(tokens, s, self.config.denoiser.patch);
        let px = px
            .into_iter()
            .map(|v| if v.is_nan() { 0.5 } else { ((v + 1.0) / 2.0).clamp(0.0, 1.0) })
            .collect();
        ImageBuffer::from_pixels(s, s, px).expect("clipped pixels are valid")
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            optimizer: None,
            train_step: 0,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.model.store;
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            train_step: self.train_step,
            params: store
                .iter()
                .map(|(n, m)| (n.to_string(), m.rows(), m.cols()))
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |m: &Mat| {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, m) in store.iter() {
            push(m);
        }
        if let Some(o) = &self.optimizer {
            for m in o.m.iter().chain(&o.v) {
                push(m);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut data = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if body[hlen..].len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut model = Model::new(header.config)?;
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != header.params.len() {
            return Err(bad("parameter count differs from the configured architecture"));
        }
        let mut read = |rows: usize, cols: usize| -> Result<Mat> {
            let v: Vec<f64> = data.by_ref().take(rows * cols).collect();
            if v.len() != rows * cols {
                return Err(bad("truncated parameter payload"));
            }
            Ok(Mat::from_vec(rows, cols, v))
        };
        for (id, (name, rows, cols)) in ids.iter().zip(&header.params) {
            if model.store.name(*id) != name || model.store.get(*id).shape() != (*rows, *cols) {
                return Err(Error::Checkpoint(format!("parameter {name} does not match the architecture")));
            }
            *model.store.get_mut(*id) = read(*rows, *cols)?;
        }
        let optimizer = match header.optimizer {
            Some(h) => {
                let shapes: Vec<(usize, usize)> = header.params.iter().map(|p| (p.1, p.2)).collect();
                let m = shapes.iter().map(|&(r, c)| read(r, c)).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|&(r, c)| read(r, c)).collect::<Result<Vec<_>>>()?;
                Some(AdamW {
                    config: h.config,
                    step: h.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        if data.next().is_some() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            model,
            optimizer,
            train_step: header.train_step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a file on disk.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
