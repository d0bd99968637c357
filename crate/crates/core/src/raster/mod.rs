//! Differentiable soft rasterization of filled cubic outlines.

mod crop;
pub mod nearest;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glyph::{parameterize, GlyphOutline, Point2};

pub use crop::{crop_augment, crop_image, scatter_crops, CropBatch, CropRect};
pub use nearest::{nearest_on_segment, Flattened, Nearest};
pub use render::{backprop, rasterize, render, Render};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid raster config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("crop of {crop_px} px does not fit a {width}x{height} image")]
    CropTooLarge { crop_px: u32, width: u32, height: u32 },
    #[error("png: {0}")]
    Png(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    #[default]
    Nonzero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub width: u32,
    pub height: u32,
    /// Logistic edge width, px.
    pub edge_softness: f64,
    pub fill_rule: FillRule,
    /// Samples per pixel along each axis.
    pub supersample: u32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            edge_softness: 1.0,
            fill_rule: FillRule::Nonzero,
            supersample: 1,
        }
    }
}

impl RasterConfig {
    pub fn square(px: u32, edge_softness: f64) -> Self {
        Self {
            width: px,
            height: px,
            edge_softness,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::InvalidConfig("zero-sized canvas".into()));
        }
        if !(self.edge_softness > 0.0 && self.edge_softness.is_finite()) {
            return Err(RasterError::InvalidConfig(format!(
                "edge_softness must be positive, got {}",
                self.edge_softness
            )));
        }
        if self.supersample == 0 || self.supersample > 16 {
            return Err(RasterError::InvalidConfig(format!(
                "supersample must be in 1..=16, got {}",
                self.supersample
            )));
        }
        Ok(())
    }
}

/// Row-major grayscale coverage, 1 = ink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<f64>) -> Result<Self, RasterError> {
        let expected = (width * height) as usize;
        if pixels.len() != expected {
            return Err(RasterError::ShapeMismatch {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            0.0
        } else {
            self.sum() / self.pixels.len() as f64
        }
    }

    /// Pixels quantized to 8 bits, clamped to [0, 1].
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        encode_png(self.width, self.height, png::ColorType::Grayscale, &self.to_u8())
    }

    /// Decodes an 8-bit PNG; color images are reduced to their luma.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let (width, height, rgb) = decode_png_rgb(bytes)?;
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64) / 255.0)
            .collect();
        Ok(Self { width, height, pixels })
    }
}

/// PNG-encodes 8-bit samples (`Grayscale` or `Rgb`).
pub fn encode_png(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| RasterError::Png(e.to_string()))?;
    w.write_image_data(data).map_err(|e| RasterError::Png(e.to_string()))?;
    w.finish().map_err(|e| RasterError::Png(e.to_string()))?;
    Ok(out)
}

/// Decodes any 8-bit gray/gray-alpha/RGB/RGBA PNG to packed RGB.
pub fn decode_png_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), RasterError> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| RasterError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RasterError::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    let rgb = match info.color_type {
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|c| [c[0], c[0], c[0]]).collect(),
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
        other => return Err(RasterError::Png(format!("unsupported color type {other:?}"))),
    };
    Ok((info.width, info.height, rgb))
}

/// dLoss/dθ, laid out like the source parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointResult {
    pub grad: Vec<f64>,
}

impl AdjointResult {
    pub fn zeros(n: usize) -> Self {
        Self { grad: vec![0.0; n] }
    }

    pub fn max_abs(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Signed distance from `q` to `outline`, negative inside under the
/// nonzero rule. An empty outline gives `+inf`.
pub fn signed_distance(q: Point2, outline: &GlyphOutline) -> f64 {
    let p = parameterize(outline);
    match render::Scene::from_params(&p.values, &p.layout) {
        Ok(scene) => scene.signed_distance(q),
        Err(_) => f64::INFINITY,
    }
}
