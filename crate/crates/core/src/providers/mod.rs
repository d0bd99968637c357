//! Stylization and texture stages behind a provider interface, with a
//! deterministic mock and an HTTP client.

mod http;
mod mock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::raster::{decode_png_rgb, encode_png, RasterError, RasterImage};

pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{value_noise, MockProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider rejected the request ({status} {code}): {message}")]
    Rejected { status: u16, code: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("image: {0}")]
    Image(String),
}

impl From<RasterError> for ProviderError {
    fn from(e: RasterError) -> Self {
        ProviderError::Image(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Canny,
    Depth,
    Scribble,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Canny => "canny",
            Condition::Depth => "depth",
            Condition::Scribble => "scribble",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizeRequest {
    /// Semantic layout image.
    pub image: RasterImage,
    pub prompt: String,
    /// In [0, 1].
    pub strength: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureRequest {
    /// Stylized image (luma) whose ink is being textured.
    pub image: RasterImage,
    pub prompt: String,
    pub condition: Condition,
    pub original_font_image: Option<RasterImage>,
    pub seed: u64,
}

/// Length-prefixed canonical encoding, so distinct requests never share
/// a byte stream.
struct Canon(Sha256);

impl Canon {
    fn new(tag: &str) -> Self {
        let mut c = Canon(Sha256::new());
        c.bytes(tag.as_bytes());
        c
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
    }

    fn u64(&mut self, v: u64) {
        self.0.update(v.to_le_bytes());
    }

    fn image(&mut self, img: &RasterImage) {
        self.u64(img.width as u64);
        self.u64(img.height as u64);
        self.u64(img.pixels.len() as u64);
        for p in &img.pixels {
            self.0.update(p.to_bits().to_le_bytes());
        }
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

impl StylizeRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(ProviderError::InvalidRequest(format!(
                "strength {} outside [0, 1]",
                self.strength
            )));
        }
        if self.image.is_empty() {
            return Err(ProviderError::InvalidRequest("empty image".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over every request field.
    pub fn digest(&self) -> String {
        let mut c = Canon::new("stylize/v1");
        c.image(&self.image);
        c.bytes(self.prompt.as_bytes());
        c.u64(self.strength.to_bits());
        c.u64(self.seed);
        c.finish()
    }
}

impl TextureRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if self.image.is_empty() {
            return Err(ProviderError::InvalidRequest("empty image".into()));
        }
        if let Some(o) = &self.original_font_image {
            if !o.same_shape(&self.image) {
                return Err(ProviderError::InvalidRequest("original font image size differs".into()));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut c = Canon::new("texture/v1");
        c.image(&self.image);
        c.bytes(self.prompt.as_bytes());
        c.bytes(self.condition.as_str().as_bytes());
        match &self.original_font_image {
            Some(o) => {
                c.u64(1);
                c.image(o);
            }
            None => c.u64(0),
        }
        c.u64(self.seed);
        c.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider_id: String,
    pub model_id: String,
    pub seed: u64,
    pub request_digest: String,
    pub condition: Option<Condition>,
}

/// 8-bit RGB output of a provider.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    /// Packed RGB, row-major.
    pub rgb: Vec<u8>,
    pub provenance: Provenance,
}

impl RenderedImage {
    pub fn to_png(&self) -> Result<Vec<u8>, ProviderError> {
        Ok(encode_png(self.width, self.height, png::ColorType::Rgb, &self.rgb)?)
    }

    pub fn from_png(bytes: &[u8], provenance: Provenance) -> Result<Self, ProviderError> {
        let (width, height, rgb) = decode_png_rgb(bytes)?;
        Ok(Self {
            width,
            height,
            rgb,
            provenance,
        })
    }

    /// Rec. 601 luma in [0, 1].
    pub fn luma(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            pixels: self
                .rgb
                .chunks_exact(3)
                .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64) / 255.0)
                .collect(),
        }
    }

    pub fn mean_channel(&self) -> f64 {
        if self.rgb.is_empty() {
            return 0.0;
        }
        self.rgb.iter().map(|&v| v as f64).sum::<f64>() / self.rgb.len() as f64 / 255.0
    }
}

pub trait RenderProvider: Send + Sync {
    fn id(&self) -> String;
    fn stylize(&self, req: &StylizeRequest) -> Result<RenderedImage, ProviderError>;
    fn texture(&self, req: &TextureRequest) -> Result<RenderedImage, ProviderError>;
}

/// Intersection over union of the two images thresholded at 0.5.
pub fn silhouette_iou(a: &RasterImage, b: &RasterImage) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        let (p, q) = (x >= 0.5, y >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
