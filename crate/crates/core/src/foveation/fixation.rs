use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixation counts used for training masks and for trial gating.
pub const FIXATION_COUNTS: [usize; 5] = [1, 2, 3, 5, 10];

/// Square image split into square patches: the token grid geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub image_size: usize,
    pub patch_size: usize,
}

impl GridGeometry {
    pub fn new(image_size: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || image_size == 0 || image_size % patch_size != 0 {
            return Err(Error::geometry(format!(
                "image size {image_size} is not divisible by patch size {patch_size}"
            )));
        }
        Ok(Self {
            image_size,
            patch_size,
        })
    }

    /// Patches per side (`G`).
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    /// Pixel coordinate of the centre of patch `(row, col)`.
    pub fn patch_center(&self, row: usize, col: usize) -> (f64, f64) {
        let p = self.patch_size as f64;
        ((col as f64 + 0.5) * p, (row as f64 + 0.5) * p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub onset_ms: f64,
    pub duration_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixationSource {
    #[default]
    Human,
    Random,
    ClickProxy,
}

/// Ordered fixations in image pixel coordinates (x right, y down, origin
/// top-left). Serialises as a bare JSON array of fixations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixationSequence {
    pub points: Vec<Fixation>,
    #[serde(skip)]
    pub source: FixationSource,
}

impl FixationSequence {
    pub fn new(points: Vec<Fixation>, source: FixationSource) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("fixation sequence has no points".into()));
        }
        for w in points.windows(2) {
            if w[1].onset_ms <= w[0].onset_ms {
                return Err(Error::Domain(format!(
                    "fixation onsets must strictly increase ({} then {})",
                    w[0].onset_ms, w[1].onset_ms
                )));
            }
        }
        Ok(Self { points, source })
    }

    /// Convenience constructor for coordinates only: onsets every 300 ms,
    /// 250 ms durations.
    pub fn from_coords(coords: &[(f64, f64)], source: FixationSource) -> Result<Self> {
        let points = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Fixation {
                x,
                y,
                onset_ms: 300.0 * i as f64,
                duration_ms: 250.0,
            })
            .collect();
        Self::new(points, source)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for f in &self.points {
            if !(f.x >= 0.0 && f.y >= 0.0 && f.x < width as f64 && f.y < height as f64) {
                return Err(Error::OutOfRange {
                    x: f.x,
                    y: f.y,
                    size: width.max(height),
                });
            }
        }
        Ok(())
    }
}

/// Binary per-patch retention grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationMask {
    grid_size: usize,
    bits: Vec<bool>,
    retained_count: usize,
}

impl FixationMask {
    pub fn empty(grid_size: usize) -> Self {
        Self {
            grid_size,
            bits: vec![false; grid_size * grid_size],
            retained_count: 0,
        }
    }

    pub fn full(grid_size: usize) -> Self {
        Self {
            grid_size,
            bits: vec![true; grid_size * grid_size],
            retained_count: grid_size * grid_size,
        }
    }

    pub fn set(&mut self, row: usize, col: usize) {
        let i = row * self.grid_size + col;
        if !self.bits[i] {
            self.bits[i] = true;
            self.retained_count += 1;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.grid_size + col]
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn retained_count(&self) -> usize {
        self.retained_count
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Retained patches as `(row, col)` in row-major order.
    pub fn retained(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.grid_size, i % self.grid_size))
            .collect()
    }
}

/// Patch containing pixel `(x, y)`; boundaries resolve by floor.
pub fn fixation_to_patch_index(
    x: f64,
    y: f64,
    image_size: usize,
    patch_size: usize,
) -> Result<(usize, usize)> {
    let geo = GridGeometry::new(image_size, patch_size)?;
    if !(x >= 0.0 && y >= 0.0 && x < image_size as f64 && y < image_size as f64) {
        return Err(Error::OutOfRange {
            x,
            y,
            size: image_size,
        });
    }
    let g = geo.grid_size();
    let row = ((y / patch_size as f64).floor() as usize).min(g - 1);
    let col = ((x / patch_size as f64).floor() as usize).min(g - 1);
    Ok((row, col))
}

pub fn build_fixation_mask(
    fixes: &FixationSequence,
    image_size: usize,
    patch_size: usize,
) -> Result<FixationMask> {
    if fixes.is_empty() {
        return Err(Error::EmptyInput("no fixations to mask".into()));
    }
    let geo = GridGeometry::new(image_size, patch_size)?;
    let mut mask = FixationMask::empty(geo.grid_size());
    for f in &fixes.points {
        let (r, c) = fixation_to_patch_index(f.x, f.y, image_size, patch_size)?;
        mask.set(r, c);
    }
    Ok(mask)
}

/// `n` fixations at the centres of `n` distinct patches drawn uniformly
/// without replacement.
pub fn sample_random_fixations(
    n: usize,
    image_size: usize,
    patch_size: usize,
    seed: u64,
) -> Result<FixationSequence> {
    let geo = GridGeometry::new(image_size, patch_size)?;
    let capacity = geo.num_patches();
    if n == 0 {
        return Err(Error::EmptyInput("zero fixations requested".into()));
    }
    if n > capacity {
        return Err(Error::Capacity {
            requested: n,
            capacity,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = geo.grid_size();
    let coords: Vec<(f64, f64)> = index::sample(&mut rng, capacity, n)
        .into_iter()
        .map(|i| geo.patch_center(i / g, i % g))
        .collect();
    FixationSequence::from_coords(&coords, FixationSource::Random)
}
