use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foveation::ImageBuffer;

/// Single-scale even-phase Gabor bank parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub wavelength: f64,
    pub sigma: f64,
    pub aspect: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            wavelength: 8.0,
            sigma: 4.0,
            aspect: 0.5,
        }
    }
}

pub const GABOR_ORIENTATIONS: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

/// Zero-mean even Gabor kernel, `(2r+1)²` taps with `r = ⌈3σ⌉`. At 0° the
/// carrier varies along x, so the filter responds to vertical structure.
pub fn gabor_kernel(orientation_deg: f64, p: &GaborParams) -> (usize, Vec<f64>) {
    let r = (3.0 * p.sigma).ceil() as isize;
    let n = (2 * r + 1) as usize;
    let th = orientation_deg.to_radians();
    let (s, c) = th.sin_cos();
    let mut k = Vec::with_capacity(n * n);
    for y in -r..=r {
        for x in -r..=r {
            let (x, y) = (x as f64, y as f64);
            let xr = x * c + y * s;
            let yr = -x * s + y * c;
            let env = (-(xr * xr + p.aspect * p.aspect * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
            k.push(env * (2.0 * std::f64::consts::PI * xr / p.wavelength).cos());
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    for v in &mut k {
        *v -= mean;
    }
    (n, k)
}

/// Correlates a row-major `w×h` plane with an `n×n` kernel, clamping at borders.
pub fn filter2d(plane: &[f64], w: usize, h: usize, n: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (n / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                let sy = (y + ky).clamp(0, h as isize - 1) as usize;
                let krow = &kernel[((ky + r) as usize) * n..((ky + r) as usize + 1) * n];
                for (kx, kv) in (-r..=r).zip(krow) {
                    let sx = (x + kx).clamp(0, w as isize - 1) as usize;
                    acc += kv * plane[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Mean absolute Gabor response normalised by mean intensity (0 for a black image).
pub fn gabor_response(img: &ImageBuffer, orientation_deg: f64, p: &GaborParams) -> f64 {
    let g = img.grayscale();
    let mean = g.iter().sum::<f64>() / g.len().max(1) as f64;
    if mean <= 1e-12 {
        return 0.0;
    }
    let (n, k) = gabor_kernel(orientation_deg, p);
    let resp = filter2d(&g, img.width(), img.height(), n, &k);
    resp.iter().map(|v| v.abs()).sum::<f64>() / resp.len() as f64 / mean
}

fn same_size(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::geometry(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `response(gen) − response(orig)`; positive means the generated image has
/// stronger texture at that orientation.
pub fn gabor_diff(orig: &ImageBuffer, gen: &ImageBuffer, orientation_deg: f64, p: &GaborParams) -> Result<f64> {
    same_size(orig, gen)?;
    Ok(gabor_response(gen, orientation_deg, p) - gabor_response(orig, orientation_deg, p))
}

/// Mean Sobel gradient magnitude divided by its upper bound `4√2`, in `[0, 1]`.
/// Kernels are applied in difference form, so flat regions give exactly 0.
pub fn sobel_density(img: &ImageBuffer) -> f64 {
    let g = img.grayscale();
    let (w, h) = (img.width() as isize, img.height() as isize);
    if w == 0 || h == 0 {
        return 0.0;
    }
    let at = |x: isize, y: isize| g[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) - at(x - 1, y - 1)) + 2.0 * (at(x + 1, y) - at(x - 1, y)) + (at(x + 1, y + 1) - at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) - at(x - 1, y - 1)) + 2.0 * (at(x, y + 1) - at(x, y - 1)) + (at(x + 1, y + 1) - at(x + 1, y - 1));
            total += gx.hypot(gy);
        }
    }
    total / (w * h) as f64 / (4.0 * std::f64::consts::SQRT_2)
}

/// `density(gen) − density(orig)`, in `[-1, 1]`.
pub fn sobel_edge_diff(orig: &ImageBuffer, gen: &ImageBuffer) -> Result<f64> {
    same_size(orig, gen)?;
    Ok(sobel_density(gen) - sobel_density(orig))
}

pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(1/MSE)` over all channels, capped at 99 dB.
pub fn psnr(orig: &ImageBuffer, gen: &ImageBuffer) -> Result<f64> {
    same_size(orig, gen)?;
    let n = orig.pixels().len().max(1) as f64;
    let mse = orig
        .pixels()
        .iter()
        .zip(gen.pixels())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}
