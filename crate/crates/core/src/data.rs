//! Procedural scene dataset.
//!
//! Each scene has a two-colour gradient background and two to four flat
//! shapes (rectangles and discs). Shapes share one scene-level fine texture
//! (stripes or checks with a 2–4 px period) that survives only at full
//! resolution: blurring to a quarter of the side removes it, while the
//! colour layout stays visible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::foveation::ImageBuffer;
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Flat,
    HorizontalStripes,
    VerticalStripes,
    Checks,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).hypot(y - cy) < r,
        }
    }
}

/// Lazily generated, seed-indexed scene collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticScenes {
    pub seed: u64,
    pub len: usize,
    pub side: usize,
}

impl SyntheticScenes {
    pub fn new(seed: u64, len: usize, side: usize) -> Self {
        Self { seed, len, side }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Scene `index`; any index is valid, `len` only bounds iteration.
    pub fn image(&self, index: usize) -> ImageBuffer {
        let mut rng = seeds::rng(self.seed, &[0x5ce0e, index as u64]);
        let s = self.side as f64;
        let bg_a = random_colour(&mut rng);
        let bg_b = random_colour(&mut rng);
        let vertical = rng.random::<bool>();
        let texture = match rng.random_range(0..4) {
            0 => Texture::Flat,
            1 => Texture::HorizontalStripes,
            2 => Texture::VerticalStripes,
            _ => Texture::Checks,
        };
        let period = rng.random_range(2..=4usize);
        let n = rng.random_range(2..=4usize);
        let shapes: Vec<(Shape, [f64; 3], [f64; 3])> = (0..n)
            .map(|_| {
                let size = rng.random_range(0.2..0.5) * s;
                let cx = rng.random_range(0.1..0.9) * s;
                let cy = rng.random_range(0.1..0.9) * s;
                let shape = if rng.random::<bool>() {
                    let aspect = rng.random_range(0.6..1.6);
                    let (hw, hh) = (size * aspect / 2.0, size / aspect / 2.0);
                    Shape::Rect {
                        x0: cx - hw,
                        y0: cy - hh,
                        x1: cx + hw,
                        y1: cy + hh,
                    }
                } else {
                    Shape::Disc { cx, cy, r: size / 2.0 }
                };
                let base = random_colour(&mut rng);
                let alt = base.map(|c| (c + if c > 0.5 { -0.45 } else { 0.45 }).clamp(0.0, 1.0));
                (shape, base, alt)
            })
            .collect();
        ImageBuffer::from_fn(self.side, self.side, |x, y| {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            for (shape, base, alt) in shapes.iter().rev() {
                if shape.contains(fx, fy) {
                    let on = match texture {
                        Texture::Flat => false,
                        Texture::HorizontalStripes => (y / period) % 2 == 1,
                        Texture::VerticalStripes => (x / period) % 2 == 1,
                        Texture::Checks => (x / period + y / period) % 2 == 1,
                    };
                    return if on { *alt } else { *base };
                }
            }
            let u = if vertical { fy / s } else { fx / s };
            [0, 1, 2].map(|c| bg_a[c] * (1.0 - u) + bg_b[c] * u)
        })
    }
}

fn random_colour<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}
