use sha2::{Digest, Sha256};

use super::{Provenance, ProviderError, RenderProvider, RenderedImage, StylizeRequest, TextureRequest};
use crate::raster::RasterImage;
use crate::semtypo::mix_seed;

/// Offline provider. Output bytes depend on the request alone.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockProvider;

const MODEL_ID: &str = "mock-v1";

/// Smooth seeded lattice noise in [0, 1) with lattice spacing `cell` px.
pub fn value_noise(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - ix, gy - iy);
    let lattice = |i: f64, j: f64| {
        let h = mix_seed(mix_seed(seed, i as i64 as u64), j as i64 as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let top = lattice(ix, iy) * (1.0 - sx) + lattice(ix + 1.0, iy) * sx;
    let bottom = lattice(ix, iy + 1.0) * (1.0 - sx) + lattice(ix + 1.0, iy + 1.0) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Separable Gaussian blur over taps -2..=2 (sigma 1 px), edges clamped.
fn blur(img: &RasterImage) -> RasterImage {
    let raw: Vec<f64> = (-2i32..=2).map(|k| (-(k * k) as f64 / 2.0).exp()).collect();
    let norm: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|k| k / norm).collect();
    let (w, h) = (img.width as i64, img.height as i64);
    let pass = |src: &RasterImage, dx: i64, dy: i64| {
        let mut out = RasterImage::new(src.width, src.height);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let o = k as i64 - 2;
                    let sx = (x + o * dx).clamp(0, w - 1);
                    let sy = (y + o * dy).clamp(0, h - 1);
                    acc += wk * src.get(sx as u32, sy as u32);
                }
                out.set(x as u32, y as u32, acc);
            }
        }
        out
    };
    pass(&pass(img, 1, 0), 0, 1)
}

/// Three channel factors in `[lo, lo + span]` drawn from a prompt hash.
fn hashed_color(tag: &str, prompt: &str, lo: f64, span: f64) -> [f64; 3] {
    let d = Sha256::digest(format!("{tag}\0{prompt}").as_bytes());
    [0, 1, 2].map(|i| lo + span * d[i] as f64 / 255.0)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl RenderProvider for MockProvider {
    fn id(&self) -> String {
        "mock".into()
    }

    fn stylize(&self, req: &StylizeRequest) -> Result<RenderedImage, ProviderError> {
        req.validate()?;
        let soft = blur(&req.image);
        // Unit-luma tint: ink keeps its brightness, so the 0.5 silhouette
        // survives up to the blur and noise.
        let raw = hashed_color("tint", &req.prompt, 0.7, 0.3);
        let luma = 0.299 * raw[0] + 0.587 * raw[1] + 0.114 * raw[2];
        let tint = raw.map(|c| c / luma);
        let depth = 0.15 * req.strength;
        let mut rgb = Vec::with_capacity(soft.len() * 3);
        for y in 0..soft.height {
            for x in 0..soft.width {
                let n = value_noise(x as f64, y as f64, 12.0, req.seed);
                let v = soft.get(x, y).clamp(0.0, 1.0) * (1.0 - depth * n);
                rgb.extend(tint.map(|c| to_byte(v * c)));
            }
        }
        Ok(RenderedImage {
            width: soft.width,
            height: soft.height,
            rgb,
            provenance: Provenance {
                provider_id: self.id(),
                model_id: MODEL_ID.into(),
                seed: req.seed,
                request_digest: req.digest(),
                condition: None,
            },
        })
    }

    fn texture(&self, req: &TextureRequest) -> Result<RenderedImage, ProviderError> {
        req.validate()?;
        let bg = hashed_color("background", &req.prompt, 0.0, 0.25);
        let c1 = hashed_color("ink-a", &req.prompt, 0.5, 0.5);
        let c2 = hashed_color("ink-b", &req.prompt, 0.5, 0.5);
        let img = &req.image;
        let mut rgb = Vec::with_capacity(img.len() * 3);
        for y in 0..img.height {
            for x in 0..img.width {
                let m = if img.get(x, y) >= 0.5 { 1.0 } else { 0.0 };
                let (fx, fy) = (x as f64, y as f64);
                let n = 0.6 * value_noise(fx, fy, 8.0, req.seed) + 0.4 * value_noise(fx, fy, 3.0, req.seed ^ 1);
                for ch in 0..3 {
                    let tex = c1[ch] + (c2[ch] - c1[ch]) * n;
                    rgb.push(to_byte(bg[ch] * (1.0 - m) + tex * m));
                }
            }
        }
        Ok(RenderedImage {
            width: img.width,
            height: img.height,
            rgb,
            provenance: Provenance {
                provider_id: self.id(),
                model_id: MODEL_ID.into(),
                seed: req.seed,
                request_digest: req.digest(),
                condition: Some(req.condition),
            },
        })
    }
}
