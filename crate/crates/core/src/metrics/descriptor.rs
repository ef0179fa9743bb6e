//! Handcrafted image descriptors used in place of pretrained networks.

use crate::foveation::ImageBuffer;
use crate::tensor::Mat;

use super::lowlevel::sobel_density;

/// Mean absolute horizontal and vertical neighbour differences of a
/// luminance plane restricted to `[x0, x1) × [y0, y1)`.
fn fine_energy(g: &[f64], w: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> (f64, f64) {
    let (mut dx, mut nx, mut dy, mut ny) = (0.0, 0usize, 0.0, 0usize);
    for y in y0..y1 {
        for x in x0..x1 {
            if x + 1 < x1 {
                dx += (g[y * w + x + 1] - g[y * w + x]).abs();
                nx += 1;
            }
            if y + 1 < y1 {
                dy += (g[(y + 1) * w + x] - g[y * w + x]).abs();
                ny += 1;
            }
        }
    }
    (dx / nx.max(1) as f64, dy / ny.max(1) as f64)
}

fn cell_mean(img: &ImageBuffer, x0: usize, x1: usize, y0: usize, y1: usize) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.rgb(x, y);
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
    }
    let n = ((x1 - x0) * (y1 - y0)).max(1) as f64;
    acc.map(|v| v / n)
}

pub const FID_FEATURE_DIM: usize = 18;

/// 18-D distribution descriptor: quadrant mean colours, luminance spread,
/// fine horizontal/vertical variation, Laplacian energy, Sobel density and
/// mean saturation.
pub fn fid_features(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let g = img.grayscale();
    let mut f = Vec::with_capacity(FID_FEATURE_DIM);
    for (qy, qx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let m = cell_mean(img, qx * w / 2, (qx + 1) * w / 2, qy * h / 2, (qy + 1) * h / 2);
        f.extend_from_slice(&m);
    }
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    f.push((g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64).sqrt());
    let (dx, dy) = fine_energy(&g, w, 0, w, 0, h);
    f.push(dx);
    f.push(dy);
    let mut lap = 0.0;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let c = g[y * w + x];
            lap += (g[(y - 1) * w + x] + g[(y + 1) * w + x] + g[y * w + x - 1] + g[y * w + x + 1] - 4.0 * c).abs();
        }
    }
    f.push(lap / ((w.saturating_sub(2)) * (h.saturating_sub(2))).max(1) as f64);
    f.push(sobel_density(img));
    let sat = img
        .pixels()
        .chunks_exact(3)
        .map(|p| p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min))
        .sum::<f64>()
        / (w * h) as f64;
    f.push(sat);
    f
}

/// Stacks [`fid_features`] of many images into an `N × 18` matrix.
pub fn fid_feature_matrix(images: &[ImageBuffer]) -> Mat {
    let rows: Vec<Vec<f64>> = images.iter().map(fid_features).collect();
    Mat::from_rows(&rows)
}

/// Cells per side of the embedding layout grid.
pub const EMBED_CELLS: usize = 4;
/// Weight of the texture half of the embedding relative to colour.
pub const EMBED_TEXTURE_WEIGHT: f64 = 2.0;

/// Perceptual embedding: for each of 4×4 cells, the mean colour offset from
/// mid-grey and the weighted fine-scale horizontal/vertical variation.
pub fn embedding(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let g = img.grayscale();
    let n = EMBED_CELLS;
    let mut e = Vec::with_capacity(n * n * 5);
    for cy in 0..n {
        for cx in 0..n {
            let (x0, x1, y0, y1) = (cx * w / n, (cx + 1) * w / n, cy * h / n, (cy + 1) * h / n);
            let m = cell_mean(img, x0, x1, y0, y1);
            e.extend(m.iter().map(|v| v - 0.5));
            let (dx, dy) = fine_energy(&g, w, x0, x1, y0, y1);
            e.push(EMBED_TEXTURE_WEIGHT * dx);
            e.push(EMBED_TEXTURE_WEIGHT * dy);
        }
    }
    e
}

/// Mid-level per-patch features (`(side/p)² × 5`): mean colour plus fine
/// horizontal/vertical variation, used for proto-object clustering.
pub fn patch_features(img: &ImageBuffer, patch: usize) -> Mat {
    let (w, h) = (img.width(), img.height());
    let g = img.grayscale();
    let (gw, gh) = (w / patch, h / patch);
    let mut m = Mat::zeros(gw * gh, 5);
    for py in 0..gh {
        for px in 0..gw {
            let (x0, x1, y0, y1) = (px * patch, (px + 1) * patch, py * patch, (py + 1) * patch);
            let c = cell_mean(img, x0, x1, y0, y1);
            let (dx, dy) = fine_energy(&g, w, x0, x1, y0, y1);
            m.row_mut(py * gw + px).copy_from_slice(&[c[0], c[1], c[2], dx, dy]);
        }
    }
    m
}

/// Early-layer stand-in: mean-centred luminance at 1/4 resolution.
pub fn early_features(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let g = img.grayscale();
    let (gw, gh) = (w / 4, h / 4);
    let mut v = Vec::with_capacity(gw * gh);
    for y in 0..gh {
        for x in 0..gw {
            let mut s = 0.0;
            for dy in 0..4 {
                for dx in 0..4 {
                    s += g[(4 * y + dy) * w + 4 * x + dx];
                }
            }
            v.push(s / 16.0);
        }
    }
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| x - mean).collect()
}
