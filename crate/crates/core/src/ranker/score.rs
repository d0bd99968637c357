use serde::{Deserialize, Serialize};

use super::RankError;
use crate::providers::silhouette_iou;
use crate::raster::RasterImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub iou: f64,
    pub ink_ratio: f64,
    pub components: f64,
    pub smoothness: f64,
    /// Plausible ink fraction range.
    pub ink_min: f64,
    pub ink_max: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            iou: 1.0,
            ink_ratio: 1.0,
            components: 0.25,
            smoothness: 0.5,
            ink_min: 0.05,
            ink_max: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub iou: f64,
    /// 0 inside the plausible range, 1 for a blank image.
    pub ink_penalty: f64,
    pub component_penalty: f64,
    /// 1 when the perimeter-squared-over-area ratio matches the reference.
    pub smoothness: f64,
    pub total: f64,
}

/// Scores a candidate image against the reference glyph render.
pub trait Scorer: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, candidate: &RasterImage, reference: &RasterImage) -> Result<f64, RankError>;
}

#[derive(Clone, Debug, Default)]
pub struct HeuristicScorer {
    pub weights: ScoreWeights,
}

impl Scorer for HeuristicScorer {
    fn id(&self) -> String {
        "heuristic-v1".into()
    }

    fn score(&self, candidate: &RasterImage, reference: &RasterImage) -> Result<f64, RankError> {
        heuristic_score(candidate, reference, &self.weights).map(|b| b.total)
    }
}

fn mask(img: &RasterImage) -> Vec<bool> {
    img.pixels.iter().map(|&v| v >= 0.5).collect()
}

/// 4-connected components of the pixels at or above 0.5.
pub fn connected_components(img: &RasterImage) -> usize {
    let (w, h) = (img.width as usize, img.height as usize);
    let ink = mask(img);
    let mut seen = vec![false; ink.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..ink.len() {
        if !ink[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if ink[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    count
}

/// Ink pixel count and the number of ink/background pixel edges (the
/// canvas border counts as background).
fn area_perimeter(img: &RasterImage) -> (usize, usize) {
    let (w, h) = (img.width as usize, img.height as usize);
    let ink = mask(img);
    let at = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && ink[y as usize * w + x as usize]
    };
    let (mut area, mut perim) = (0, 0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !at(x, y) {
                continue;
            }
            area += 1;
            perim += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .filter(|(dx, dy)| !at(x + dx, y + dy))
                .count();
        }
    }
    (area, perim)
}

pub fn heuristic_score(
    candidate: &RasterImage,
    reference: &RasterImage,
    weights: &ScoreWeights,
) -> Result<ScoreBreakdown, RankError> {
    if !candidate.same_shape(reference) {
        return Err(RankError::ShapeMismatch(format!(
            "candidate {}x{} vs reference {}x{}",
            candidate.width, candidate.height, reference.width, reference.height
        )));
    }
    let iou = silhouette_iou(candidate, reference);
    let (area, perim) = area_perimeter(candidate);
    let ratio = area as f64 / candidate.len().max(1) as f64;
    let ink_penalty = if ratio < weights.ink_min {
        (weights.ink_min - ratio) / weights.ink_min
    } else if ratio > weights.ink_max {
        (ratio - weights.ink_max) / (1.0 - weights.ink_max)
    } else {
        0.0
    };
    let component_penalty = (connected_components(candidate) as f64 - connected_components(reference) as f64).abs();
    let (ref_area, ref_perim) = area_perimeter(reference);
    let smoothness = match (area, ref_area) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let q = (perim * perim) as f64 / area as f64;
            let q_ref = (ref_perim * ref_perim) as f64 / ref_area as f64;
            1.0 / (1.0 + (q - q_ref).abs() / q_ref)
        }
    };
    let total = weights.iou * iou - weights.ink_ratio * ink_penalty - weights.components * component_penalty
        + weights.smoothness * smoothness;
    Ok(ScoreBreakdown {
        iou,
        ink_penalty,
        component_penalty,
        smoothness,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: u32, rects: &[(u32, u32, u32, u32)]) -> RasterImage {
        let mut img = RasterImage::new(w, w);
        for &(x0, y0, x1, y1) in rects {
            for y in y0..y1 {
                for x in x0..x1 {
                    img.set(x, y, 1.0);
                }
            }
        }
        img
    }

    #[test]
    fn components_and_perimeter() {
        let img = blob(20, &[(1, 1, 5, 5), (10, 10, 12, 15)]);
        assert_eq!(connected_components(&img), 2);
        assert_eq!(area_perimeter(&img), (16 + 10, 16 + 14));
    }

    #[test]
    fn reference_scores_its_maximum_iou() {
        let r = blob(20, &[(3, 3, 12, 12)]);
        let s = heuristic_score(&r, &r, &ScoreWeights::default()).unwrap();
        assert_eq!(s.iou, 1.0);
        assert_eq!(s.component_penalty, 0.0);
        assert_eq!(s.smoothness, 1.0);
        let blank = heuristic_score(&RasterImage::new(20, 20), &r, &ScoreWeights::default()).unwrap();
        assert_eq!(blank.ink_penalty, 1.0);
        assert!(blank.total < s.total);
        assert!(heuristic_score(&RasterImage::new(5, 5), &r, &ScoreWeights::default()).is_err());
    }
}
