use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SemError;
use crate::glyph::{parameterize, presplit_long_segments, BBox, GlyphOutline, ParamLayout, Point2};
use crate::raster::{AdjointResult, CropRect, RasterImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    /// Absolute bounds on the window length; when unset they follow the
    /// fractions of the chosen contour's point count.
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub presplit_threshold_px: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            min_len: None,
            max_len: None,
            min_fraction: 0.25,
            max_fraction: 0.6,
            presplit_threshold_px: 20.0,
        }
    }
}

impl RegionConfig {
    fn bounds(&self, count: usize) -> (usize, usize) {
        let min = self
            .min_len
            .unwrap_or_else(|| (self.min_fraction * count as f64).ceil() as usize)
            .max(1);
        let max = self
            .max_len
            .unwrap_or_else(|| (self.max_fraction * count as f64).floor() as usize)
            .max(min)
            .min(count);
        (min, max)
    }
}

/// A circular window of control points on one contour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSelection {
    pub contour: usize,
    /// Global point index where the window starts.
    pub start_index: usize,
    pub length: usize,
    /// One flag per parameter coordinate.
    pub movable_mask: Vec<bool>,
}

impl RegionSelection {
    /// Window of `length` points starting at local point `start` of `contour`.
    pub fn window(layout: &ParamLayout, contour: usize, start: usize, length: usize) -> Result<Self, SemError> {
        let c = layout
            .contours
            .get(contour)
            .ok_or_else(|| SemError::RegionInfeasible(format!("no contour {contour}")))?;
        let n = c.point_count();
        if length == 0 || length > n || start >= n {
            return Err(SemError::RegionInfeasible(format!(
                "window start {start} length {length} on a contour of {n} points"
            )));
        }
        let mut movable_mask = vec![false; layout.value_count()];
        for k in 0..length {
            let p = c.first_point + (start + k) % n;
            movable_mask[2 * p] = true;
            movable_mask[2 * p + 1] = true;
        }
        Ok(Self {
            contour,
            start_index: c.first_point + start,
            length,
            movable_mask,
        })
    }

    pub fn whole_contour(layout: &ParamLayout, contour: usize) -> Result<Self, SemError> {
        let n = layout.contours.get(contour).map_or(0, |c| c.point_count());
        Self::window(layout, contour, 0, n)
    }

    /// Global point indices in window order.
    pub fn points(&self, layout: &ParamLayout) -> Vec<usize> {
        let c = layout.contours[self.contour];
        let n = c.point_count();
        let local = self.start_index - c.first_point;
        (0..self.length).map(|k| c.first_point + (local + k) % n).collect()
    }

    pub fn movable_count(&self) -> usize {
        self.movable_mask.iter().filter(|&&m| m).count()
    }
}

/// Pre-splits long segments, then draws a seeded window of control points.
///
/// Returns the pre-split outline (the selection indexes its parameters)
/// together with the selection.
pub fn select_region(
    outline: &GlyphOutline,
    rng_seed: u64,
    cfg: &RegionConfig,
) -> Result<(GlyphOutline, RegionSelection), SemError> {
    if outline.is_empty() {
        return Err(SemError::EmptyOutline);
    }
    if let (Some(lo), Some(hi)) = (cfg.min_len, cfg.max_len) {
        if lo > hi {
            return Err(SemError::InvalidConfig(format!("min_len {lo} > max_len {hi}")));
        }
    }
    let split = presplit_long_segments(outline, cfg.presplit_threshold_px);
    let layout = parameterize(&split).layout;
    let eligible: Vec<(usize, usize)> = layout
        .contours
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.point_count()))
        .filter(|&(_, n)| cfg.bounds(n).0 <= n)
        .collect();
    if eligible.is_empty() {
        let most = layout.contours.iter().map(|c| c.point_count()).max().unwrap_or(0);
        return Err(SemError::RegionInfeasible(format!(
            "min_len {:?} exceeds the largest contour ({most} points)",
            cfg.min_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let total: usize = eligible.iter().map(|e| e.1).sum();
    let mut pick = rng.random_range(0..total);
    let &(contour, n) = eligible
        .iter()
        .find(|e| {
            if pick < e.1 {
                true
            } else {
                pick -= e.1;
                false
            }
        })
        .expect("pick is below the total");
    let (min, max) = cfg.bounds(n);
    let start = rng.random_range(0..n);
    let length = rng.random_range(min..=max);
    let selection = RegionSelection::window(&layout, contour, start, length)?;
    Ok((split, selection))
}

/// Zeroes gradient entries outside the movable mask.
pub fn mask_gradient(grad: &AdjointResult, region: &RegionSelection) -> Result<AdjointResult, SemError> {
    if grad.grad.len() != region.movable_mask.len() {
        return Err(SemError::ShapeMismatch {
            expected: region.movable_mask.len(),
            got: grad.grad.len(),
        });
    }
    Ok(AdjointResult {
        grad: grad
            .grad
            .iter()
            .zip(&region.movable_mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect(),
    })
}

/// Bounding box of the region's control points, dilated.
pub fn region_box(region: &RegionSelection, values: &[f64], layout: &ParamLayout, dilation_px: f64) -> BBox {
    BBox::from_points(
        region
            .points(layout)
            .into_iter()
            .map(|p| Point2::new(values[2 * p], values[2 * p + 1])),
    )
    .dilate(dilation_px)
}

/// Zeroes a crop's upstream outside the region box; `rect` places the crop
/// on the canvas. A pixel counts as inside when its center is.
pub fn localize_loss(upstream: &RasterImage, rect: CropRect, region_box: &BBox) -> RasterImage {
    let mut out = upstream.clone();
    for y in 0..upstream.height {
        let cy = (rect.y + y) as f64 + 0.5;
        for x in 0..upstream.width {
            let c = Point2::new((rect.x + x) as f64 + 0.5, cy);
            if !region_box.contains(c) {
                out.set(x, y, 0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    /// Three segments, nine control points.
    fn triangle() -> GlyphOutline {
        shapes::polygon(&[Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(10.0, 10.0)])
    }

    #[test]
    fn full_window_selects_everything() {
        let o = triangle();
        let cfg = RegionConfig {
            min_len: Some(9),
            max_len: Some(9),
            presplit_threshold_px: 0.0,
            ..RegionConfig::default()
        };
        let (_, r) = select_region(&o, 1, &cfg).unwrap();
        assert_eq!(r.length, 9);
        assert!(r.movable_mask.iter().all(|&m| m));
    }

    #[test]
    fn selection_is_a_circular_window() {
        let o = shapes::circle(Point2::new(50.0, 50.0), 30.0, 4);
        let cfg = RegionConfig::default();
        for seed in 0..40 {
            let (split, r) = select_region(&o, seed, &cfg).unwrap();
            let (split2, r2) = select_region(&o, seed, &cfg).unwrap();
            assert_eq!((&split, &r), (&split2, &r2));
            let layout = parameterize(&split).layout;
            let n = layout.contours[r.contour].point_count();
            let first = layout.contours[r.contour].first_point;
            let mut found = false;
            for s in 0..n {
                let expect: Vec<bool> = (0..layout.value_count())
                    .map(|v| {
                        let p = v / 2;
                        p >= first && p < first + n && (p - first + n - s) % n < r.length
                    })
                    .collect();
                found |= expect == r.movable_mask;
            }
            assert!(found, "seed {seed}");
            assert!(r.length >= (0.25 * n as f64).ceil() as usize);
            assert!(r.length <= (0.6 * n as f64).floor() as usize);
        }
    }

    #[test]
    fn infeasible_and_empty() {
        let o = triangle();
        let cfg = RegionConfig {
            min_len: Some(100),
            presplit_threshold_px: 0.0,
            ..RegionConfig::default()
        };
        assert!(matches!(select_region(&o, 0, &cfg), Err(SemError::RegionInfeasible(_))));
        let empty = GlyphOutline::new(vec![], ' ', 1000, 0.0);
        assert!(matches!(select_region(&empty, 0, &cfg), Err(SemError::EmptyOutline)));
    }

    #[test]
    fn mask_keeps_exactly_movable_entries() {
        let o = shapes::circle(Point2::new(50.0, 50.0), 30.0, 4);
        let layout = parameterize(&o).layout;
        let r = RegionSelection::window(&layout, 0, 10, 5).unwrap();
        let g = AdjointResult {
            grad: (0..layout.value_count()).map(|i| i as f64 + 1.0).collect(),
        };
        let m = mask_gradient(&g, &r).unwrap();
        for (i, (&v, &mask)) in m.grad.iter().zip(&r.movable_mask).enumerate() {
            assert_eq!(v != 0.0, mask, "{i}");
        }
        let full = RegionSelection::whole_contour(&layout, 0).unwrap();
        assert_eq!(mask_gradient(&g, &full).unwrap(), g);
        assert!(mask_gradient(&AdjointResult::zeros(3), &r).is_err());
    }

    #[test]
    fn localize_respects_box() {
        let up = RasterImage::filled(8, 8, 1.0);
        let rect = CropRect { x: 4, y: 4, w: 8, h: 8 };
        let everything = BBox::from_points([Point2::new(-100.0, -100.0), Point2::new(100.0, 100.0)]);
        assert_eq!(localize_loss(&up, rect, &everything), up);
        let away = BBox::from_points([Point2::new(50.0, 50.0), Point2::new(60.0, 60.0)]);
        assert!(localize_loss(&up, rect, &away).pixels.iter().all(|&v| v == 0.0));
        let part = BBox::from_points([Point2::new(0.0, 0.0), Point2::new(6.0, 6.0)]);
        let l = localize_loss(&up, rect, &part);
        assert_eq!(l.sum(), 4.0);
    }
}
