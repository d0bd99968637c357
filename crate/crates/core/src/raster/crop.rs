use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RasterError, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropBatch {
    pub crops: Vec<RasterImage>,
    pub crop_rects: Vec<CropRect>,
    pub source_width: u32,
    pub source_height: u32,
}

impl CropBatch {
    /// Sums per-crop upstream images back onto the source canvas.
    pub fn scatter(&self, upstream: &[RasterImage]) -> Result<RasterImage, RasterError> {
        scatter_crops(&self.crop_rects, upstream, self.source_width, self.source_height)
    }
}

pub fn crop_image(img: &RasterImage, r: CropRect) -> RasterImage {
    let mut pixels = Vec::with_capacity((r.w * r.h) as usize);
    for y in r.y..r.y + r.h {
        let row = (y * img.width) as usize;
        pixels.extend_from_slice(&img.pixels[row + r.x as usize..row + (r.x + r.w) as usize]);
    }
    RasterImage {
        width: r.w,
        height: r.h,
        pixels,
    }
}

/// `n` square crops at seeded uniform positions.
pub fn crop_augment(img: &RasterImage, n: usize, crop_px: u32, rng_seed: u64) -> Result<CropBatch, RasterError> {
    if crop_px == 0 || crop_px > img.width.min(img.height) {
        return Err(RasterError::CropTooLarge {
            crop_px,
            width: img.width,
            height: img.height,
        });
    }
    if n == 0 {
        return Err(RasterError::InvalidConfig("crop count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let rects: Vec<CropRect> = (0..n)
        .map(|_| CropRect {
            x: rng.random_range(0..=img.width - crop_px),
            y: rng.random_range(0..=img.height - crop_px),
            w: crop_px,
            h: crop_px,
        })
        .collect();
    Ok(CropBatch {
        crops: rects.iter().map(|&r| crop_image(img, r)).collect(),
        crop_rects: rects,
        source_width: img.width,
        source_height: img.height,
    })
}

/// Adjoint of cropping: every crop's upstream is added at its source rect.
pub fn scatter_crops(
    rects: &[CropRect],
    upstream: &[RasterImage],
    width: u32,
    height: u32,
) -> Result<RasterImage, RasterError> {
    if rects.len() != upstream.len() {
        return Err(RasterError::ShapeMismatch {
            expected: rects.len(),
            got: upstream.len(),
        });
    }
    let mut out = RasterImage::new(width, height);
    for (r, u) in rects.iter().zip(upstream) {
        if u.width != r.w || u.height != r.h {
            return Err(RasterError::ShapeMismatch {
                expected: (r.w * r.h) as usize,
                got: u.len(),
            });
        }
        if r.x + r.w > width || r.y + r.h > height {
            return Err(RasterError::InvalidGeometry(format!(
                "crop {r:?} outside {width}x{height}"
            )));
        }
        for y in 0..r.h {
            let dst = ((r.y + y) * width + r.x) as usize;
            let src = (y * r.w) as usize;
            for x in 0..r.w as usize {
                out.pixels[dst + x] += u.pixels[src + x];
            }
        }
    }
    Ok(out)
}
