use crate::error::{Error, Result};

use super::ImageBuffer;

/// Side length of the intermediate image for `blur_resample`.
pub fn blurred_side(side: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidScale(scale));
    }
    let s = (scale * side as f64).round() as usize;
    if s == 0 {
        return Err(Error::geometry(format!(
            "scale {scale} collapses a {side}px image to zero pixels"
        )));
    }
    Ok(s)
}

/// Peripheral degradation: downsample a square image to `round(scale·S)` and
/// upsample back to `S×S`, both with a triangle (bilinear) kernel whose
/// support widens with the reduction factor. `scale = 1` is the identity.
pub fn blur_resample(img: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    if !img.is_square() {
        return Err(Error::geometry("blur_resample expects a square image"));
    }
    let side = img.width();
    let small = blurred_side(side, scale)?;
    if small == side {
        return Ok(img.clone());
    }
    let down = resize(img, small, small);
    Ok(resize(&down, side, side))
}

/// Separable triangle-filter resize.
pub fn resize(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    let wx = weights(img.width(), width);
    let wy = weights(img.height(), height);
    let sh = img.height();
    // horizontal pass: sh × width
    let mut tmp = vec![0.0; sh * width * 3];
    for y in 0..sh {
        for (x, taps) in wx.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(j, w) in taps {
                let p = img.rgb(j, y);
                for c in 0..3 {
                    acc[c] += w * p[c];
                }
            }
            tmp[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = ImageBuffer::new(width, height);
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for &(j, w) in taps {
                let i = (j * width + x) * 3;
                for c in 0..3 {
                    acc[c] += w * tmp[i + c];
                }
            }
            out.put(x, y, [acc[0].clamp(0.0, 1.0), acc[1].clamp(0.0, 1.0), acc[2].clamp(0.0, 1.0)]);
        }
    }
    out
}

/// Normalised triangle-filter taps mapping `src` samples onto `dst` samples
/// (pixel centres at half-integers).
fn weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    let support = ratio.max(1.0);
    (0..dst)
        .map(|i| {
            let centre = (i as f64 + 0.5) * ratio;
            let lo = (centre - support).floor().max(0.0) as usize;
            let hi = ((centre + support).ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (lo..hi)
                .filter_map(|j| {
                    let d = ((j as f64 + 0.5 - centre) / support).abs();
                    (d < 1.0).then_some((j, 1.0 - d))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_energy(img: &ImageBuffer) -> f64 {
        let g = img.grayscale();
        let w = img.width();
        let h = img.height();
        let mut e = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = g[y * w + x];
                let l = g[(y - 1) * w + x] + g[(y + 1) * w + x] + g[y * w + x - 1] + g[y * w + x + 1]
                    - 4.0 * c;
                e += l.abs();
            }
        }
        e / ((w - 2) * (h - 2)) as f64
    }

    fn textured(side: usize) -> ImageBuffer {
        ImageBuffer::from_fn(side, side, |x, y| {
            let stripes = if (x / 2) % 2 == 0 { 0.8 } else { 0.2 };
            let blob = if (x as f64 - 20.0).hypot(y as f64 - 30.0) < 9.0 { 0.9 } else { 0.1 };
            [stripes, blob, (x + y) as f64 / (2 * side) as f64]
        })
    }

    #[test]
    fn intermediate_size_for_quarter_scale() {
        assert_eq!(blurred_side(448, 0.25).unwrap(), 112);
        assert_eq!(blurred_side(64, 0.0625).unwrap(), 4);
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = textured(32);
        assert_eq!(blur_resample(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn checkerboard_half_scale_is_uniform_grey() {
        let img = ImageBuffer::from_fn(2, 2, |x, y| [((x + y) % 2) as f64; 3]);
        let out = blur_resample(&img, 0.5).unwrap();
        for v in out.pixels() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_scales_are_rejected() {
        let img = textured(16);
        assert!(matches!(blur_resample(&img, 0.0), Err(Error::InvalidScale(_))));
        assert!(matches!(blur_resample(&img, 1.5), Err(Error::InvalidScale(_))));
        assert!(blur_resample(&img, 0.01).is_err());
    }

    #[test]
    fn output_keeps_size() {
        let img = textured(448);
        let out = blur_resample(&img, 0.25).unwrap();
        assert_eq!((out.width(), out.height()), (448, 448));
    }

    #[test]
    fn stronger_blur_never_adds_detail() {
        let img = textured(64);
        let scales = [0.0625, 0.125, 0.25, 0.5, 1.0];
        let energies: Vec<f64> = scales
            .iter()
            .map(|&s| laplacian_energy(&blur_resample(&img, s).unwrap()))
            .collect();
        for pair in energies.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-12, "{energies:?}");
        }
    }
}
