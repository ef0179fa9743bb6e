use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::foveation::{blur_resample, ImageBuffer};

/// Strictly positive relative depth values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::geometry(format!(
                "{} depth values for a {width}x{height} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("depth values must be finite and positive".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Luminance-derived stand-in used when no external depth estimate is
    /// available: `1 + luma` of a quarter-scale blur, so brighter regions
    /// read as farther.
    pub fn luminance_proxy(img: &ImageBuffer) -> Result<Self> {
        let side = img.width().min(img.height());
        let src = if img.is_square() && side >= 4 {
            blur_resample(img, 0.25)?
        } else {
            img.clone()
        };
        let values = src.grayscale().into_iter().map(|v| 1.0 + v).collect();
        Self::new(img.width(), img.height(), values)
    }

    /// Reads a single-channel PFM (`Pf`) file.
    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pfm_bytes(&fs::read(path)?)
    }

    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Ingestion(format!("PFM: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "Pf" {
            return Err(bad("only single-channel Pf files are supported"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
        let body = bytes.get(pos..).ok_or_else(|| bad("missing data"))?;
        if body.len() != w * h * 4 {
            return Err(bad("data length does not match header"));
        }
        let little = scale < 0.0;
        let raw: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
            })
            .collect();
        // PFM stores rows bottom to top.
        let mut values = Vec::with_capacity(w * h);
        for y in (0..h).rev() {
            values.extend_from_slice(&raw[y * w..(y + 1) * w]);
        }
        Self::new(w, h, values).map_err(|e| Error::Ingestion(e.to_string()))
    }

    pub fn to_pfm_bytes(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            for v in &self.values[y * self.width..(y + 1) * self.width] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }
}

fn same_size(a: &DepthMap, b: &DepthMap) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::geometry("depth maps differ in size"));
    }
    Ok(())
}

/// Default variance weight of the scale-invariant log error.
pub const SILOG_LAMBDA: f64 = 0.85;

/// `10·√(mean(g²) − λ·mean(g)²)` with `g = log pred − log ref`.
pub fn silog_with(pred: &DepthMap, reference: &DepthMap, lambda: f64) -> Result<f64> {
    same_size(pred, reference)?;
    let n = pred.values.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (p, r) in pred.values.iter().zip(&reference.values) {
        let g = p.ln() - r.ln();
        s1 += g;
        s2 += g * g;
    }
    let (m1, m2) = (s1 / n, s2 / n);
    Ok(10.0 * (m2 - lambda * m1 * m1).max(0.0).sqrt())
}

pub fn silog(pred: &DepthMap, reference: &DepthMap) -> Result<f64> {
    silog_with(pred, reference, SILOG_LAMBDA)
}

pub fn depth_rmse(pred: &DepthMap, reference: &DepthMap) -> Result<f64> {
    same_size(pred, reference)?;
    let n = pred.values.len() as f64;
    Ok((pred
        .values
        .iter()
        .zip(&reference.values)
        .map(|(p, r)| (p - r).powi(2))
        .sum::<f64>()
        / n)
        .sqrt())
}

pub const DEPTH_THRESHOLD_EXPONENTS: [f64; 4] = [0.25, 1.0, 2.0, 3.0];

/// Fraction of pixels with `max(p/r, r/p) < 1.25^k`.
pub fn depth_threshold_accuracy(pred: &DepthMap, reference: &DepthMap, k: f64) -> Result<f64> {
    same_size(pred, reference)?;
    let thr = 1.25f64.powf(k);
    let hits = pred
        .values
        .iter()
        .zip(&reference.values)
        .filter(|(p, r)| (*p / *r).max(*r / *p) < thr)
        .count();
    Ok(hits as f64 / pred.values.len() as f64)
}
