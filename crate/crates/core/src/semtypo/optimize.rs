use serde::{Deserialize, Serialize};

use super::region::{localize_loss, mask_gradient, region_box, RegionSelection};
use super::{mix_seed, GuidanceProvider, SemError};
use crate::glyph::ParameterVector;
use crate::raster::{crop_augment, rasterize, render, AdjointResult, RasterConfig, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Edge softness annealed linearly from `start` to `end` over the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub start: f64,
    pub end: f64,
}

impl SigmaSchedule {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            start: sigma,
            end: sigma,
        }
    }

    pub fn at(&self, iteration: usize, iterations: usize) -> f64 {
        if iterations <= 1 {
            return self.start;
        }
        let f = iteration as f64 / (iterations - 1) as f64;
        self.start + (self.end - self.start) * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub canvas_px: u32,
    pub crop_count: usize,
    pub crop_px: u32,
    pub sigma: SigmaSchedule,
    pub supersample: u32,
    pub seed: u64,
    /// Pixel loss outside the region box dilated by this much is dropped;
    /// `None` keeps the whole crop.
    pub loss_locality_dilation: Option<f64>,
    /// A frame is kept every `frame_stride` iterations (0 disables frames).
    pub frame_stride: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            canvas_px: 256,
            crop_count: 4,
            crop_px: 192,
            sigma: SigmaSchedule { start: 2.0, end: 0.8 },
            supersample: 1,
            seed: 0,
            loss_locality_dilation: Some(20.0),
            frame_stride: 50,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<(), SemError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SemError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.sigma.start > 0.0 && self.sigma.end > 0.0) {
            return Err(SemError::InvalidConfig("edge softness must stay positive".into()));
        }
        if self.crop_count == 0 || self.crop_px == 0 || self.crop_px > self.canvas_px {
            return Err(SemError::InvalidConfig(format!(
                "{} crops of {} px on a {} px canvas",
                self.crop_count, self.crop_px, self.canvas_px
            )));
        }
        Ok(())
    }

    pub fn raster(&self, sigma: f64) -> RasterConfig {
        RasterConfig {
            supersample: self.supersample,
            ..RasterConfig::square(self.canvas_px, sigma)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub iteration: usize,
    /// Guidance loss at the parameters before this iteration's step.
    pub loss: f64,
    pub params: Vec<f64>,
    #[serde(skip)]
    pub frame: Option<RasterImage>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &RasterImage)> {
        self.entries
            .iter()
            .filter_map(|e| e.frame.as_ref().map(|f| (e.iteration, f)))
    }

    /// `{"iteration":..,"loss":..}` per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::json!({"iteration": e.iteration, "loss": e.loss}).to_string());
            out.push('\n');
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    b1t: f64,
    b2t: f64,
}

/// Runs the region-constrained optimization loop.
pub fn optimize(
    params: &ParameterVector,
    region: &RegionSelection,
    guidance: &dyn GuidanceProvider,
    cfg: &OptimizationConfig,
) -> Result<(ParameterVector, Trajectory), SemError> {
    optimize_with(params, region, guidance, cfg, &mut |_| {})
}

/// As [`optimize`], reporting each trajectory entry as it is recorded.
pub fn optimize_with(
    params: &ParameterVector,
    region: &RegionSelection,
    guidance: &dyn GuidanceProvider,
    cfg: &OptimizationConfig,
    observer: &mut dyn FnMut(&TrajectoryEntry),
) -> Result<(ParameterVector, Trajectory), SemError> {
    cfg.validate()?;
    if region.movable_mask.len() != params.len() {
        return Err(SemError::ShapeMismatch {
            expected: params.len(),
            got: region.movable_mask.len(),
        });
    }
    let mut values = params.values.clone();
    let mut trajectory = Trajectory::default();
    let movable: Vec<usize> = (0..values.len()).filter(|&i| region.movable_mask[i]).collect();
    let mut adam = Adam {
        m: vec![0.0; movable.len()],
        v: vec![0.0; movable.len()],
        b1t: 1.0,
        b2t: 1.0,
    };
    for it in 0..cfg.iterations {
        let sigma = cfg.sigma.at(it, cfg.iterations);
        let rendered = render(&values, &params.layout, &cfg.raster(sigma))?;
        let batch = crop_augment(
            rendered.image(),
            cfg.crop_count,
            cfg.crop_px,
            mix_seed(cfg.seed, 2 * it as u64),
        )?;
        let out = guidance.guide(&batch, it, mix_seed(cfg.seed, 2 * it as u64 + 1))?;
        let finite_grad = out.grad.per_crop.iter().all(|c| c.pixels.iter().all(|v| v.is_finite()));
        if !out.loss.is_finite() || !finite_grad {
            return Err(SemError::NonFiniteLoss {
                iteration: it,
                last_good: values,
            });
        }
        let upstream = match cfg.loss_locality_dilation {
            Some(d) => {
                let bbox = region_box(region, &values, &params.layout, d);
                let local: Vec<RasterImage> = out
                    .grad
                    .per_crop
                    .iter()
                    .zip(&batch.crop_rects)
                    .map(|(g, &r)| localize_loss(g, r, &bbox))
                    .collect();
                batch.scatter(&local)?
            }
            None => batch.scatter(&out.grad.per_crop)?,
        };
        let grad = mask_gradient(&rendered.backprop(&upstream.pixels)?, region)?;
        let frame = (cfg.frame_stride > 0 && it % cfg.frame_stride == 0).then(|| rendered.into_image());
        let entry = TrajectoryEntry {
            iteration: it,
            loss: out.loss,
            params: values.clone(),
            frame,
        };
        observer(&entry);
        trajectory.entries.push(entry);
        step(&mut values, &movable, &grad, &mut adam, cfg);
    }
    Ok((
        ParameterVector {
            values,
            layout: params.layout.clone(),
        },
        trajectory,
    ))
}

fn step(values: &mut [f64], movable: &[usize], grad: &AdjointResult, adam: &mut Adam, cfg: &OptimizationConfig) {
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for &i in movable {
                values[i] -= cfg.learning_rate * grad.grad[i];
            }
        }
        OptimizerKind::Adam => {
            adam.b1t *= cfg.beta1;
            adam.b2t *= cfg.beta2;
            for (k, &i) in movable.iter().enumerate() {
                let g = grad.grad[i];
                adam.m[k] = cfg.beta1 * adam.m[k] + (1.0 - cfg.beta1) * g;
                adam.v[k] = cfg.beta2 * adam.v[k] + (1.0 - cfg.beta2) * g * g;
                let mh = adam.m[k] / (1.0 - adam.b1t);
                let vh = adam.v[k] / (1.0 - adam.b2t);
                values[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Full-canvas mean squared difference between a render and `target`.
pub fn canvas_mse(params: &ParameterVector, target: &RasterImage, cfg: &RasterConfig) -> Result<f64, SemError> {
    let img = rasterize(params, cfg)?;
    if !img.same_shape(target) {
        return Err(SemError::ShapeMismatch {
            expected: img.len(),
            got: target.len(),
        });
    }
    Ok(img
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / img.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::{parameterize, Point2};
    use crate::semtypo::{IdentityEncoder, NoiseSchedule, PerfectDenoiser, SdsGuidance, TargetGuidance};
    use crate::shapes;
    use std::sync::Arc;

    fn small_cfg(iterations: usize) -> OptimizationConfig {
        OptimizationConfig {
            iterations,
            canvas_px: 64,
            crop_px: 48,
            crop_count: 2,
            frame_stride: 5,
            loss_locality_dilation: Some(8.0),
            ..OptimizationConfig::default()
        }
    }

    fn circle() -> ParameterVector {
        parameterize(&shapes::circle(Point2::new(32.0, 32.0), 16.0, 6))
    }

    #[test]
    fn zero_iterations_is_identity() {
        let p = circle();
        let r = RegionSelection::window(&p.layout, 0, 2, 5).unwrap();
        let g = TargetGuidance {
            target: RasterImage::new(64, 64),
        };
        let (out, traj) = optimize(&p, &r, &g, &small_cfg(0)).unwrap();
        assert_eq!(out, p);
        assert!(traj.entries.is_empty());
    }

    #[test]
    fn frozen_coordinates_stay_bitwise() {
        let p = circle();
        let r = RegionSelection::window(&p.layout, 0, 15, 6).unwrap();
        let g = TargetGuidance {
            target: rasterize(
                &parameterize(&shapes::star(Point2::new(32.0, 32.0), 26.0, 10.0, 5)),
                &RasterConfig::square(64, 1.0),
            )
            .unwrap(),
        };
        let (out, traj) = optimize(&p, &r, &g, &small_cfg(12)).unwrap();
        let mut moved = 0;
        for i in 0..p.len() {
            if r.movable_mask[i] {
                moved += (out.values[i] != p.values[i]) as usize;
            } else {
                assert_eq!(out.values[i].to_bits(), p.values[i].to_bits());
            }
        }
        assert!(moved > 0);
        assert_eq!(traj.entries.len(), 12);
        assert_eq!(traj.frames().count(), 3);
        assert!(traj.entries.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn fixed_point_when_target_is_initial_render() {
        let p = circle();
        let mut cfg = small_cfg(10);
        cfg.sigma = SigmaSchedule::fixed(1.0);
        let target = rasterize(&p, &cfg.raster(1.0)).unwrap();
        let r = RegionSelection::whole_contour(&p.layout, 0).unwrap();
        let (out, _) = optimize(&p, &r, &TargetGuidance { target }, &cfg).unwrap();
        assert!(out.values.iter().zip(&p.values).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn perfect_sds_never_moves() {
        let p = circle();
        let r = RegionSelection::whole_contour(&p.layout, 0).unwrap();
        let g = SdsGuidance {
            denoiser: Arc::new(PerfectDenoiser),
            encoder: Arc::new(IdentityEncoder),
            prompt_key: "cat".into(),
            schedule: NoiseSchedule::default(),
            n_samples: 1,
        };
        let (out, _) = optimize(&p, &r, &g, &small_cfg(3)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = circle();
        let r = RegionSelection::window(&p.layout, 0, 0, 9).unwrap();
        let g = TargetGuidance {
            target: RasterImage::filled(64, 64, 1.0),
        };
        let a = optimize(&p, &r, &g, &small_cfg(6)).unwrap();
        let b = optimize(&p, &r, &g, &small_cfg(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let p = circle();
        let r = RegionSelection::whole_contour(&p.layout, 0).unwrap();
        let g = TargetGuidance {
            target: RasterImage::new(64, 64),
        };
        let mut cfg = small_cfg(1);
        cfg.learning_rate = 0.0;
        assert!(optimize(&p, &r, &g, &cfg).is_err());
        cfg = small_cfg(1);
        cfg.crop_px = 65;
        assert!(optimize(&p, &r, &g, &cfg).is_err());
    }
}
