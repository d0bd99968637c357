//! Score-distillation gradient estimator and the latent-space interfaces
//! it runs against.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{mix_seed, GuidanceGrad, SemError};
use crate::raster::{crop_image, CropBatch, CropRect, RasterImage};

/// Single-channel latent grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

pub trait Encoder: Send + Sync {
    fn encode(&self, img: &RasterImage) -> Latent;
    /// Pulls a latent gradient back to pixels of a `width` x `height` image.
    fn adjoint(&self, grad: &Latent, width: u32, height: u32) -> RasterImage;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEncoder;

impl Encoder for IdentityEncoder {
    fn encode(&self, img: &RasterImage) -> Latent {
        Latent {
            width: img.width,
            height: img.height,
            values: img.pixels.clone(),
        }
    }

    fn adjoint(&self, grad: &Latent, width: u32, height: u32) -> RasterImage {
        debug_assert_eq!((grad.width, grad.height), (width, height));
        RasterImage {
            width,
            height,
            pixels: grad.values.clone(),
        }
    }
}

/// Block means over `factor` x `factor` tiles; trailing partial tiles are
/// dropped (their pixels get zero gradient).
#[derive(Clone, Copy, Debug)]
pub struct AvgPoolEncoder {
    pub factor: u32,
}

impl Encoder for AvgPoolEncoder {
    fn encode(&self, img: &RasterImage) -> Latent {
        let f = self.factor.max(1);
        let (w, h) = (img.width / f, img.height / f);
        let norm = 1.0 / (f * f) as f64;
        let mut values = vec![0.0; (w * h) as usize];
        for y in 0..h * f {
            for x in 0..w * f {
                values[((y / f) * w + x / f) as usize] += img.get(x, y) * norm;
            }
        }
        Latent {
            width: w,
            height: h,
            values,
        }
    }

    fn adjoint(&self, grad: &Latent, width: u32, height: u32) -> RasterImage {
        let f = self.factor.max(1);
        let norm = 1.0 / (f * f) as f64;
        let mut out = RasterImage::new(width, height);
        for y in 0..grad.height * f {
            for x in 0..grad.width * f {
                out.set(x, y, grad.values[((y / f) * grad.width + x / f) as usize] * norm);
            }
        }
        out
    }
}

/// Per-timestep signal/noise scales, indexed by `t - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
    pub w: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: `a_t = cos((t/T + s)/(1 + s) * pi/2)` relative to
    /// `t = 0`, `sigma_t = sqrt(1 - a_t^2)`, unit weights.
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 1);
        let s = 0.008;
        let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos();
        let f0 = f(0.0);
        let a: Vec<f64> = (1..=steps)
            .map(|t| (f(t as f64) / f0).clamp(1e-4, 1.0 - 1e-8))
            .collect();
        let sigma = a.iter().map(|a| (1.0 - a * a).sqrt()).collect();
        Self {
            a,
            sigma,
            w: vec![1.0; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(1000)
    }
}

/// One noise-prediction query.
pub struct DenoiseRequest<'a> {
    pub z_t: &'a Latent,
    /// 1-based timestep.
    pub t: usize,
    pub a_t: f64,
    pub sigma_t: f64,
    pub prompt_key: &'a str,
    /// Where the crop sits on the canvas.
    pub rect: CropRect,
    /// The noise that was mixed into `z_t`. Real models ignore it; the
    /// mocks use it to be exact.
    pub injected_noise: &'a [f64],
}

pub trait Denoiser: Send + Sync {
    /// Predicted noise, same length as `req.z_t.values`.
    fn predict_noise(&self, req: &DenoiseRequest) -> Result<Vec<f64>, SemError>;
}

/// Returns the injected noise: the score residual vanishes.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectDenoiser;

impl Denoiser for PerfectDenoiser {
    fn predict_noise(&self, req: &DenoiseRequest) -> Result<Vec<f64>, SemError> {
        Ok(req.injected_noise.to_vec())
    }
}

/// `eps + offset`, plus optional zero-mean Gaussian error of scale `jitter`
/// seeded from the request contents.
#[derive(Clone, Copy, Debug, Default)]
pub struct OffsetDenoiser {
    pub offset: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Denoiser for OffsetDenoiser {
    fn predict_noise(&self, req: &DenoiseRequest) -> Result<Vec<f64>, SemError> {
        if self.jitter == 0.0 {
            return Ok(req.injected_noise.iter().map(|e| e + self.offset).collect());
        }
        let h = req
            .z_t
            .values
            .iter()
            .fold(mix_seed(self.seed, req.t as u64), |h, v| mix_seed(h, v.to_bits()));
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Ok(req
            .injected_noise
            .iter()
            .map(|e| {
                let n: f64 = rng.sample(StandardNormal);
                e + self.offset + self.jitter * n
            })
            .collect())
    }
}

/// Acts as if the clean latent were the encoding of `target`:
/// `eps_hat = (z_t - a_t * z_target) / sigma_t`, so the residual is
/// `a_t / sigma_t * (z - z_target)`.
#[derive(Clone)]
pub struct TargetDenoiser {
    pub target: RasterImage,
    pub encoder: Arc<dyn Encoder>,
}

impl Denoiser for TargetDenoiser {
    fn predict_noise(&self, req: &DenoiseRequest) -> Result<Vec<f64>, SemError> {
        let r = req.rect;
        if r.x + r.w > self.target.width || r.y + r.h > self.target.height {
            return Err(SemError::DenoiserFailure(format!(
                "crop {r:?} outside the {}x{} target",
                self.target.width, self.target.height
            )));
        }
        let z0 = self.encoder.encode(&crop_image(&self.target, r));
        if z0.values.len() != req.z_t.values.len() {
            return Err(SemError::DenoiserFailure("latent size mismatch".into()));
        }
        Ok(req
            .z_t
            .values
            .iter()
            .zip(&z0.values)
            .map(|(zt, z0)| (zt - req.a_t * z0) / req.sigma_t)
            .collect())
    }
}

/// Monte-Carlo score-distillation gradient, pulled back to crop pixels.
///
/// Returns the per-crop pixel gradients and the mean squared weighted
/// residual (a scalar to log; it is not a loss being minimized).
pub fn sds_gradient(
    denoiser: &dyn Denoiser,
    encoder: &dyn Encoder,
    crops: &CropBatch,
    prompt_key: &str,
    schedule: &NoiseSchedule,
    rng_seed: u64,
    n_samples: usize,
) -> Result<(GuidanceGrad, f64), SemError> {
    if n_samples == 0 {
        return Err(SemError::InvalidConfig("n_samples must be at least 1".into()));
    }
    if schedule.steps() == 0 {
        return Err(SemError::InvalidConfig("empty noise schedule".into()));
    }
    let latents: Vec<Latent> = crops.crops.iter().map(|c| encoder.encode(c)).collect();
    let mut acc: Vec<Vec<f64>> = latents.iter().map(|z| vec![0.0; z.values.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut residual_sq = 0.0;
    let mut residual_n = 0usize;
    let mut noise = Vec::new();
    for _ in 0..n_samples {
        let t = rng.random_range(1..=schedule.steps());
        let (a, s, w) = (schedule.a[t - 1], schedule.sigma[t - 1], schedule.w[t - 1]);
        for (k, z) in latents.iter().enumerate() {
            noise.clear();
            noise.extend((0..z.values.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z_t = Latent {
                width: z.width,
                height: z.height,
                values: z.values.iter().zip(&noise).map(|(z, e)| a * z + s * e).collect(),
            };
            let eps_hat = denoiser
                .predict_noise(&DenoiseRequest {
                    z_t: &z_t,
                    t,
                    a_t: a,
                    sigma_t: s,
                    prompt_key,
                    rect: crops.crop_rects[k],
                    injected_noise: &noise,
                })
                .map_err(|e| match e {
                    SemError::DenoiserFailure(m) => SemError::DenoiserFailure(format!("t={t}, crop {k}: {m}")),
                    other => other,
                })?;
            if eps_hat.len() != noise.len() {
                return Err(SemError::DenoiserFailure(format!(
                    "predicted {} values for a latent of {}",
                    eps_hat.len(),
                    noise.len()
                )));
            }
            for ((g, p), e) in acc[k].iter_mut().zip(&eps_hat).zip(&noise) {
                let r = w * (p - e);
                *g += r;
                residual_sq += r * r;
            }
            residual_n += noise.len();
        }
    }
    let inv = 1.0 / n_samples as f64;
    let per_crop = latents
        .iter()
        .zip(acc)
        .zip(&crops.crops)
        .map(|((z, g), c)| {
            let g = Latent {
                width: z.width,
                height: z.height,
                values: g.into_iter().map(|v| v * inv).collect(),
            };
            encoder.adjoint(&g, c.width, c.height)
        })
        .collect();
    let residual = if residual_n > 0 {
        residual_sq / residual_n as f64
    } else {
        0.0
    };
    Ok((GuidanceGrad { per_crop }, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::crop_augment;

    fn batch(seed: u64) -> CropBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = RasterImage::from_pixels(24, 24, (0..576).map(|_| rng.random::<f64>()).collect()).unwrap();
        crop_augment(&img, 3, 16, seed).unwrap()
    }

    #[test]
    fn schedule_is_positive_and_bounded() {
        let s = NoiseSchedule::cosine(1000);
        assert_eq!(s.steps(), 1000);
        for t in 0..1000 {
            assert!(s.a[t] > 0.0 && s.sigma[t] > 0.0);
            assert!((s.a[t].powi(2) + s.sigma[t].powi(2) - 1.0).abs() < 1e-12);
        }
        assert!(s.a[0] > s.a[999]);
    }

    #[test]
    fn perfect_denoiser_gives_exact_zero() {
        let b = batch(1);
        let (g, r) = sds_gradient(
            &PerfectDenoiser,
            &IdentityEncoder,
            &b,
            "k",
            &NoiseSchedule::default(),
            3,
            8,
        )
        .unwrap();
        assert_eq!(r, 0.0);
        assert!(g.per_crop.iter().all(|c| c.pixels.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn exact_offset_gives_constant() {
        let b = batch(2);
        let d = OffsetDenoiser {
            offset: 0.25,
            ..Default::default()
        };
        let (g, _) = sds_gradient(&d, &IdentityEncoder, &b, "k", &NoiseSchedule::default(), 3, 4).unwrap();
        for c in &g.per_crop {
            assert!(c.pixels.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn avg_pool_adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = AvgPoolEncoder { factor: 4 };
        let x = RasterImage::from_pixels(18, 13, (0..18 * 13).map(|_| rng.random::<f64>()).collect()).unwrap();
        let z = enc.encode(&x);
        assert_eq!((z.width, z.height), (4, 3));
        let y = Latent {
            width: 4,
            height: 3,
            values: (0..12).map(|_| rng.random::<f64>()).collect(),
        };
        let lhs: f64 = z.values.iter().zip(&y.values).map(|(a, b)| a * b).sum();
        let back = enc.adjoint(&y, 18, 13);
        let rhs: f64 = x.pixels.iter().zip(&back.pixels).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn target_denoiser_residual_points_at_target() {
        let b = batch(4);
        let target = RasterImage::new(24, 24);
        let d = TargetDenoiser {
            target,
            encoder: Arc::new(IdentityEncoder),
        };
        let (g, _) = sds_gradient(&d, &IdentityEncoder, &b, "k", &NoiseSchedule::default(), 5, 2).unwrap();
        // residual is a positive multiple of (crop - 0)
        for (gc, c) in g.per_crop.iter().zip(&b.crops) {
            for (gv, cv) in gc.pixels.iter().zip(&c.pixels) {
                assert!(gv * cv >= 0.0);
            }
        }
    }

    #[test]
    fn same_seed_same_gradient() {
        let b = batch(6);
        let d = OffsetDenoiser {
            offset: 0.1,
            jitter: 1.0,
            seed: 2,
        };
        let s = NoiseSchedule::default();
        let a = sds_gradient(&d, &IdentityEncoder, &b, "k", &s, 8, 16).unwrap().0;
        let c = sds_gradient(&d, &IdentityEncoder, &b, "k", &s, 8, 16).unwrap().0;
        assert_eq!(a, c);
    }
}
