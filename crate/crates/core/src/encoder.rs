//! Per-patch feature tokens.
//!
//! The toy encoder is training-free: each patch is flattened (pixel values
//! and their squares), projected with a fixed seeded Gaussian matrix, L2
//! normalised, offset by a 2-D sinusoidal positional code and renormalised.
//! Grids computed elsewhere can be ingested from `PTGR` files instead.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foveation::{FixationMask, GridGeometry, ImageBuffer};
use crate::tensor::Mat;

const PTGR_MAGIC: &[u8; 4] = b"PTGR";
/// Norm of the positional offset relative to the unit content vector.
const POSITION_WEIGHT: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ToyEncoder,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// Seeded Gaussian projection.
    RandomProjection,
    /// Projection matrix supplied by the caller.
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub seed: u64,
    pub mode: EncoderMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            dim: 32,
            seed: 0x5eed,
            mode: EncoderMode::RandomProjection,
        }
    }
}

/// `G×G` grid of `D`-dimensional tokens, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchTokenGrid {
    grid_size: usize,
    dim: usize,
    tokens: Vec<f32>,
    provenance: Provenance,
}

impl PatchTokenGrid {
    pub fn new(grid_size: usize, dim: usize, tokens: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if tokens.len() != grid_size * grid_size * dim {
            return Err(Error::geometry(format!(
                "{} values for a {grid_size}x{grid_size}x{dim} grid",
                tokens.len()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("token grid contains non-finite values".into()));
        }
        Ok(Self {
            grid_size,
            dim,
            tokens,
            provenance,
        })
    }

    pub fn zeros(grid_size: usize, dim: usize) -> Self {
        Self {
            grid_size,
            dim,
            tokens: vec![0.0; grid_size * grid_size * dim],
            provenance: Provenance::ToyEncoder,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn raw(&self) -> &[f32] {
        &self.tokens
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.grid_size + col) * self.dim;
        &self.tokens[i..i + self.dim]
    }

    pub fn token_at(&self, index: usize) -> &[f32] {
        &self.tokens[index * self.dim..(index + 1) * self.dim]
    }

    pub fn is_zero_token(&self, index: usize) -> bool {
        self.token_at(index).iter().all(|&v| v == 0.0)
    }

    /// All tokens as a `G²×D` matrix.
    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(
            self.num_tokens(),
            self.dim,
            self.tokens.iter().map(|&v| v as f64).collect(),
        )
    }

    /// Tokens that are not exactly zero, in row-major order, as an `N×D` matrix.
    pub fn nonzero_tokens(&self) -> Mat {
        let mut data = Vec::new();
        let mut n = 0;
        for i in 0..self.num_tokens() {
            if !self.is_zero_token(i) {
                data.extend(self.token_at(i).iter().map(|&v| v as f64));
                n += 1;
            }
        }
        Mat::from_vec(n, self.dim, data)
    }

    /// Writes the binary grid and a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ptgr_bytes())?;
        let sidecar = serde_json::json!({
            "format": "PTGR",
            "grid_size": self.grid_size,
            "dim": self.dim,
            "provenance": self.provenance,
        });
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn to_ptgr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.tokens.len() * 4);
        out.extend_from_slice(PTGR_MAGIC);
        out.extend_from_slice(&(self.grid_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.tokens {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_ptgr_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Ingestion("truncated PTGR header".into()))?;
        if &magic != PTGR_MAGIC {
            return Err(Error::Ingestion("missing PTGR magic".into()));
        }
        let g = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        if g == 0 || d == 0 {
            return Err(Error::Ingestion(format!("degenerate PTGR shape {g}x{g}x{d}")));
        }
        let expected = g
            .checked_mul(g)
            .and_then(|n| n.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Ingestion("PTGR shape overflows".into()))?;
        if r.len() != expected {
            return Err(Error::Ingestion(format!(
                "PTGR body has {} bytes, header implies {expected}",
                r.len()
            )));
        }
        let tokens: Vec<f32> = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ingestion("PTGR contains non-finite values".into()));
        }
        Ok(Self {
            grid_size: g,
            dim: d,
            tokens,
            provenance: Provenance::File,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Ingestion("truncated PTGR header".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a `PTGR` token grid from disk.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<PatchTokenGrid> {
    let bytes = fs::read(path)?;
    PatchTokenGrid::from_ptgr_bytes(&bytes)
}

/// Writes raw PTGR bytes without a sidecar (for tooling that produces its own).
pub fn write_ptgr(path: impl AsRef<Path>, grid: &PatchTokenGrid) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&grid.to_ptgr_bytes())?;
    Ok(())
}

/// Keeps tokens whose mask bit is set and zeroes the rest.
pub fn apply_mask(grid: &PatchTokenGrid, mask: &FixationMask) -> Result<PatchTokenGrid> {
    if grid.grid_size != mask.grid_size() {
        return Err(Error::geometry(format!(
            "grid is {0}x{0} but mask is {1}x{1}",
            grid.grid_size,
            mask.grid_size()
        )));
    }
    let mut out = grid.clone();
    for (i, &keep) in mask.bits().iter().enumerate() {
        if !keep {
            out.tokens[i * grid.dim..(i + 1) * grid.dim].fill(0.0);
        }
    }
    Ok(out)
}

/// Deterministic, training-free patch encoder.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    config: EncoderConfig,
    /// `(2·p²·3) × D`
    projection: Mat,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.dim < 8 {
            return Err(Error::Config(format!("encoder dim {} < 8", config.dim)));
        }
        if config.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        let rows = Self::input_width(config.patch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let projection = Mat::randn(rows, config.dim, 1.0 / (rows as f64).sqrt(), &mut rng);
        Ok(Self { config, projection })
    }

    /// Encoder with an externally supplied projection (`EncoderMode::Learned`).
    pub fn with_projection(mut config: EncoderConfig, projection: Mat) -> Result<Self> {
        let rows = Self::input_width(config.patch_size);
        if projection.shape() != (rows, config.dim) {
            return Err(Error::geometry(format!(
                "projection must be {rows}x{}, got {:?}",
                config.dim,
                projection.shape()
            )));
        }
        config.mode = EncoderMode::Learned;
        Ok(Self { config, projection })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn input_width(patch: usize) -> usize {
        2 * patch * patch * 3
    }

    /// Positional code for patch `(row, col)` of a `grid`-wide grid, with
    /// norm [`POSITION_WEIGHT`].
    pub fn positional_code(&self, row: usize, col: usize, grid: usize) -> Vec<f64> {
        let d = self.config.dim;
        let half = d / 2;
        let mut code = vec![0.0; d];
        let freqs = half / 2;
        for (axis, pos) in [(0, row), (1, col)] {
            for i in 0..freqs {
                let w = std::f64::consts::PI * (i + 1) as f64 / grid as f64;
                let p = pos as f64 + 0.5;
                code[axis * half + 2 * i] = (w * p).sin();
                code[axis * half + 2 * i + 1] = (w * p).cos();
            }
        }
        let n = norm(&code);
        if n > 0.0 {
            for v in &mut code {
                *v *= POSITION_WEIGHT / n;
            }
        }
        code
    }

    pub fn encode(&self, img: &ImageBuffer) -> Result<PatchTokenGrid> {
        encode_patches(img, self)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Encodes every patch of a square image.
pub fn encode_patches(img: &ImageBuffer, encoder: &ToyEncoder) -> Result<PatchTokenGrid> {
    if !img.is_square() {
        return Err(Error::geometry(format!(
            "encoder needs a square image, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let p = encoder.config.patch_size;
    let geo = GridGeometry::new(img.width(), p)?;
    let g = geo.grid_size();
    let d = encoder.config.dim;
    let width = ToyEncoder::input_width(p);
    let mut flat = Mat::zeros(g * g, width);
    for r in 0..g {
        for c in 0..g {
            let row = flat.row_mut(r * g + c);
            let mut k = 0;
            for y in 0..p {
                for x in 0..p {
                    let px = img.rgb(c * p + x, r * p + y);
                    for v in px {
                        row[k] = v;
                        row[k + width / 2] = v * v;
                        k += 1;
                    }
                }
            }
        }
    }
    let content = flat.matmul(&encoder.projection);
    let mut tokens = Vec::with_capacity(g * g * d);
    for i in 0..g * g {
        let mut v: Vec<f64> = content.row(i).to_vec();
        let n = norm(&v);
        if n > 1e-12 {
            for x in &mut v {
                *x /= n;
            }
        } else {
            v.fill(0.0);
        }
        let pos = encoder.positional_code(i / g, i % g, g);
        for (x, pv) in v.iter_mut().zip(&pos) {
            *x += pv;
        }
        let n = norm(&v);
        tokens.extend(v.iter().map(|x| (x / n) as f32));
    }
    PatchTokenGrid::new(g, d, tokens, Provenance::ToyEncoder)
}
