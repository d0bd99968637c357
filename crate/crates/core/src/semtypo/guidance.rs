use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::sds::{sds_gradient, Denoiser, Encoder, NoiseSchedule};
use super::SemError;
use crate::raster::{crop_image, CropBatch, RasterImage};

/// Per-crop dLoss/dpixel images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceGrad {
    pub per_crop: Vec<RasterImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceOutput {
    pub loss: f64,
    pub grad: GuidanceGrad,
}

/// Supplies the pixel-space gradient for a batch of crops.
pub trait GuidanceProvider: Send + Sync {
    fn guide(&self, batch: &CropBatch, iteration: usize, seed: u64) -> Result<GuidanceOutput, SemError>;
}

/// Mean squared difference between the crops and the matching target
/// crops, averaged over every pixel of the batch, and its gradient.
pub fn target_guidance(crops: &CropBatch, target: &RasterImage) -> Result<GuidanceOutput, SemError> {
    if target.width != crops.source_width || target.height != crops.source_height {
        return Err(SemError::ShapeMismatch {
            expected: (crops.source_width * crops.source_height) as usize,
            got: target.len(),
        });
    }
    let count: usize = crops.crops.iter().map(RasterImage::len).sum();
    if count == 0 {
        return Ok(GuidanceOutput {
            loss: 0.0,
            grad: GuidanceGrad { per_crop: Vec::new() },
        });
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut per_crop = Vec::with_capacity(crops.crops.len());
    for (x, &r) in crops.crops.iter().zip(&crops.crop_rects) {
        let t = crop_image(target, r);
        let mut g = RasterImage::new(x.width, x.height);
        for ((gv, xv), tv) in g.pixels.iter_mut().zip(&x.pixels).zip(&t.pixels) {
            let d = xv - tv;
            loss += d * d;
            *gv = 2.0 * d * scale;
        }
        per_crop.push(g);
    }
    Ok(GuidanceOutput {
        loss: loss * scale,
        grad: GuidanceGrad { per_crop },
    })
}

#[derive(Clone, Debug)]
pub struct TargetGuidance {
    pub target: RasterImage,
}

impl GuidanceProvider for TargetGuidance {
    fn guide(&self, batch: &CropBatch, _iteration: usize, _seed: u64) -> Result<GuidanceOutput, SemError> {
        target_guidance(batch, &self.target)
    }
}

#[derive(Clone)]
pub struct SdsGuidance {
    pub denoiser: Arc<dyn Denoiser>,
    pub encoder: Arc<dyn Encoder>,
    pub prompt_key: String,
    pub schedule: NoiseSchedule,
    pub n_samples: usize,
}

impl GuidanceProvider for SdsGuidance {
    fn guide(&self, batch: &CropBatch, _iteration: usize, seed: u64) -> Result<GuidanceOutput, SemError> {
        let (grad, residual) = sds_gradient(
            self.denoiser.as_ref(),
            self.encoder.as_ref(),
            batch,
            &self.prompt_key,
            &self.schedule,
            seed,
            self.n_samples,
        )?;
        Ok(GuidanceOutput { loss: residual, grad })
    }
}
