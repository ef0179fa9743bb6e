use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`, stored row-major HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::geometry(format!(
                "{} values for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Domain("pixel values must be finite and in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel; values are clamped.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                img.put(x, y, [v[0].clamp(0.0, 1.0), v[1].clamp(0.0, 1.0), v[2].clamp(0.0, 1.0)]);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    /// 8-bit quantised copy (what a PNG round trip yields).
    pub fn quantized(&self) -> ImageBuffer {
        let mut out = self.clone();
        for v in &mut out.pixels {
            *v = to_u8(*v) as f64 / 255.0;
        }
        out
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            let bytes: Vec<u8> = self.pixels.iter().map(|&v| to_u8(v)).collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(std::io::Cursor::new(bytes))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(BufReader::new(File::open(path)?))
    }

    fn decode<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<Self> {
        let mut decoder = png::Decoder::new(reader);
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let data = &buf[..info.buffer_size()];
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => {
                return Err(Error::Png("unexpanded palette image".into()));
            }
        };
        let mut pixels = Vec::with_capacity(w * h * 3);
        for px in data.chunks_exact(channels) {
            let rgb = match channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            pixels.extend(rgb.iter().map(|&b| b as f64 / 255.0));
        }
        Self::from_pixels(w, h, pixels)
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Zero-pads to an `S×S` square with `S = max(W, H)`, content anchored top-left.
pub fn pad_to_square(img: &ImageBuffer) -> ImageBuffer {
    let side = img.width.max(img.height);
    if img.width == side && img.height == side {
        return img.clone();
    }
    let mut out = ImageBuffer::new(side, side);
    for y in 0..img.height {
        let src = &img.pixels[y * img.width * 3..(y + 1) * img.width * 3];
        out.pixels[y * side * 3..y * side * 3 + img.width * 3].copy_from_slice(src);
    }
    out
}
