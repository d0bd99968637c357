//! Region-constrained semantic optimization of glyph control points.

mod guidance;
mod optimize;
mod region;
mod sds;

use thiserror::Error;

use crate::glyph::GlyphError;
use crate::raster::RasterError;

pub use guidance::{target_guidance, GuidanceGrad, GuidanceOutput, GuidanceProvider, SdsGuidance, TargetGuidance};
pub use optimize::{
    canvas_mse, optimize, optimize_with, OptimizationConfig, OptimizerKind, SigmaSchedule, Trajectory, TrajectoryEntry,
};
pub use region::{localize_loss, mask_gradient, region_box, select_region, RegionConfig, RegionSelection};
pub use sds::{
    sds_gradient, AvgPoolEncoder, DenoiseRequest, Denoiser, Encoder, IdentityEncoder, Latent, NoiseSchedule,
    OffsetDenoiser, PerfectDenoiser, TargetDenoiser,
};

#[derive(Debug, Error)]
pub enum SemError {
    #[error("outline has no contours")]
    EmptyOutline,
    #[error("region infeasible: {0}")]
    RegionInfeasible(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("denoiser failure: {0}")]
    DenoiserFailure(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        /// Parameters before the failing iteration.
        last_good: Vec<f64>,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Glyph(#[from] GlyphError),
}

/// SplitMix64 finalizer, used to derive per-iteration seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
