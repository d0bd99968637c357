//! Glyph geometry: TrueType outline loading, closed cubic contours, exact
//! curve operations and the flat parameterization the optimizer works on.

mod font;
mod geom;
mod param;
mod svg;

pub use font::{load_glyph, Font};
pub use geom::{bernstein3, elevate_quadratic, subdivide_segment, BBox, CubicSegment, Point2};
pub use param::{parameterize, ContourLayout, ParamLayout, ParameterVector, PointRef, PointRole};
pub use svg::{to_svg_document, to_svg_path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Control-point floor used when the caller does not pick one.
pub const DEFAULT_MIN_POINTS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlyphError {
    #[error("malformed font: {0}")]
    MalformedFont(String),
    #[error("codepoint U+{:04X} is not mapped by the font", *.0 as u32)]
    MissingGlyph(char),
    #[error("unsupported outline format: {0}")]
    UnsupportedOutlineFormat(String),
    #[error("subdivision parameter {0} outside (0, 1)")]
    InvalidParameter(f64),
    #[error("outline has contours but a zero-area bounding box")]
    DegenerateBBox,
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("canvas must be at least 8 px, got {0}")]
    CanvasTooSmall(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Clockwise,
    Counterclockwise,
}

impl Orientation {
    /// Orientation from a signed area in the outline's own frame
    /// (positive means counterclockwise with y pointing up).
    pub fn from_signed_area(area: f64) -> Self {
        if area >= 0.0 {
            Orientation::Counterclockwise
        } else {
            Orientation::Clockwise
        }
    }
}

/// A closed loop of cubic segments with exact C0 continuity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    segments: Vec<CubicSegment>,
    orientation: Orientation,
}

impl Contour {
    /// Validates closure (bit-exact shared endpoints), finiteness and the
    /// two-segment minimum; orientation is derived from the signed area.
    pub fn new(segments: Vec<CubicSegment>) -> Result<Self, GlyphError> {
        if segments.len() < 2 {
            return Err(GlyphError::InvalidContour(format!(
                "{} segment(s); a contour needs at least 2",
                segments.len()
            )));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !seg.is_finite() {
                return Err(GlyphError::InvalidContour(format!("segment {i} is not finite")));
            }
            let next = &segments[(i + 1) % segments.len()];
            if seg.p3 != next.p0 {
                return Err(GlyphError::InvalidContour(format!(
                    "segment {i} does not join segment {}",
                    (i + 1) % segments.len()
                )));
            }
        }
        let area: f64 = segments.iter().map(CubicSegment::signed_area).sum();
        Ok(Self {
            segments,
            orientation: Orientation::from_signed_area(area),
        })
    }

    pub fn segments(&self) -> &[CubicSegment] {
        &self.segments
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn signed_area(&self) -> f64 {
        self.segments.iter().map(CubicSegment::signed_area).sum()
    }

    /// Distinct control points: three per segment once endpoints are shared.
    pub fn point_count(&self) -> usize {
        3 * self.segments.len()
    }

    pub fn control_points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.segments.iter().flat_map(|s| [s.p0, s.p1, s.p2])
    }

    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<Contour, GlyphError> {
        Contour::new(self.segments.iter().map(|s| s.map_points(&f)).collect())
    }
}

/// Outline of one character.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphOutline {
    pub contours: Vec<Contour>,
    pub codepoint: char,
    pub units_per_em: u16,
    pub advance_width: f64,
    pub bbox: BBox,
}

impl GlyphOutline {
    /// Builds an outline and computes its control-point bounding box.
    pub fn new(contours: Vec<Contour>, codepoint: char, units_per_em: u16, advance_width: f64) -> Self {
        let bbox = BBox::from_points(contours.iter().flat_map(|c| c.control_points()));
        Self {
            contours,
            codepoint,
            units_per_em,
            advance_width,
            bbox,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.contours.iter().map(Contour::point_count).sum()
    }

    pub fn segment_count(&self) -> usize {
        self.contours.iter().map(|c| c.segments.len()).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = &CubicSegment> + '_ {
        self.contours.iter().flat_map(|c| c.segments.iter())
    }

    /// Applies a point map to every control point; orientation and bbox are
    /// recomputed.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<GlyphOutline, GlyphError> {
        let contours = self
            .contours
            .iter()
            .map(|c| c.map_points(&f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GlyphOutline::new(
            contours,
            self.codepoint,
            self.units_per_em,
            self.advance_width,
        ))
    }

    /// The outermost contour: the one with the largest absolute area.
    pub fn outer_contour(&self) -> Option<usize> {
        self.contours
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.signed_area().abs().total_cmp(&b.1.signed_area().abs()))
            .map(|(i, _)| i)
    }

    /// Contours whose orientation opposes the outermost one.
    pub fn holes(&self) -> Vec<usize> {
        let Some(outer) = self.outer_contour() else {
            return Vec::new();
        };
        let o = self.contours[outer].orientation;
        self.contours
            .iter()
            .enumerate()
            .filter(|(_, c)| c.orientation != o)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Pieces used to measure arc length by polyline.
const ARC_PIECES: usize = 32;

/// Subdivides the longest segment at t = 0.5 until the outline has at least
/// `min_points` distinct control points. Never merges.
pub fn rebalance_control_points(outline: &GlyphOutline, min_points: usize) -> GlyphOutline {
    if outline.is_empty() || outline.point_count() >= min_points {
        return outline.clone();
    }
    let mut contours: Vec<Vec<(CubicSegment, f64)>> = outline
        .contours
        .iter()
        .map(|c| c.segments.iter().map(|s| (*s, s.polyline_length(ARC_PIECES))).collect())
        .collect();
    let mut count = outline.point_count();
    while count < min_points {
        // first of the longest wins ties, keeping the result deterministic
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (ci, segs) in contours.iter().enumerate() {
            for (si, &(_, len)) in segs.iter().enumerate() {
                if len > best.2 {
                    best = (ci, si, len);
                }
            }
        }
        let (ci, si, _) = best;
        let (seg, _) = contours[ci][si];
        let (a, b) = seg.split(0.5).expect("0.5 is interior");
        contours[ci][si] = (a, a.polyline_length(ARC_PIECES));
        contours[ci].insert(si + 1, (b, b.polyline_length(ARC_PIECES)));
        count += 3;
    }
    let contours = contours
        .into_iter()
        .map(|segs| Contour::new(segs.into_iter().map(|(s, _)| s).collect()).expect("split preserves closure"))
        .collect();
    GlyphOutline::new(contours, outline.codepoint, outline.units_per_em, outline.advance_width)
}

/// Splits every segment whose flattened length exceeds `threshold` into
/// equal-parameter pieces no longer than the threshold.
pub fn presplit_long_segments(outline: &GlyphOutline, threshold: f64) -> GlyphOutline {
    if !(threshold > 0.0) {
        return outline.clone();
    }
    let contours = outline
        .contours
        .iter()
        .map(|c| {
            let mut out = Vec::with_capacity(c.segments.len());
            for seg in &c.segments {
                split_until_short(*seg, threshold, &mut out);
            }
            Contour::new(out).expect("split preserves closure")
        })
        .collect();
    GlyphOutline::new(contours, outline.codepoint, outline.units_per_em, outline.advance_width)
}

fn split_until_short(seg: CubicSegment, threshold: f64, out: &mut Vec<CubicSegment>) {
    if seg.polyline_length(ARC_PIECES) <= threshold {
        out.push(seg);
        return;
    }
    let (a, b) = seg.split(0.5).expect("0.5 is interior");
    split_until_short(a, threshold, out);
    split_until_short(b, threshold, out);
}

/// Uniform scale + translation from font units to a square canvas with the
/// y axis flipped (image convention, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanvasTransform {
    pub scale: f64,
    pub offset: Point2,
}

impl CanvasTransform {
    /// Fraction of the canvas left as margin on every side.
    pub const MARGIN_FRACTION: f64 = 0.05;

    /// The em square is scaled to fill `canvas_px` minus the margins and the
    /// glyph's bounding box is centered on the canvas.
    pub fn for_outline(outline: &GlyphOutline, canvas_px: u32) -> Result<Self, GlyphError> {
        if canvas_px < 8 {
            return Err(GlyphError::CanvasTooSmall(canvas_px));
        }
        let canvas = canvas_px as f64;
        let margin = Self::MARGIN_FRACTION * canvas;
        let scale = (canvas - 2.0 * margin) / outline.units_per_em.max(1) as f64;
        let c = if outline.is_empty() {
            Point2::new(outline.units_per_em as f64 / 2.0, outline.units_per_em as f64 / 2.0)
        } else {
            outline.bbox.center()
        };
        Ok(Self {
            scale,
            offset: Point2::new(canvas / 2.0 - scale * c.x, canvas / 2.0 + scale * c.y),
        })
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.scale * p.x + self.offset.x, self.offset.y - self.scale * p.y)
    }

    pub fn invert(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.offset.x) / self.scale, (self.offset.y - p.y) / self.scale)
    }
}

/// Maps an outline from font units onto a `canvas_px` square canvas.
pub fn normalize_outline(outline: &GlyphOutline, canvas_px: u32) -> Result<GlyphOutline, GlyphError> {
    let tf = CanvasTransform::for_outline(outline, canvas_px)?;
    if outline.is_empty() {
        return Ok(outline.clone());
    }
    if outline.bbox.width() <= 0.0 || outline.bbox.height() <= 0.0 {
        return Err(GlyphError::DegenerateBBox);
    }
    let mut out = outline.map_points(|p| tf.apply(p))?;
    out.advance_width = outline.advance_width * tf.scale;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn square(x0: f64, y0: f64, side: f64) -> GlyphOutline {
        let pts = [
            Point2::new(x0, y0),
            Point2::new(x0 + side, y0),
            Point2::new(x0 + side, y0 + side),
            Point2::new(x0, y0 + side),
        ];
        let segs = (0..4).map(|i| CubicSegment::line(pts[i], pts[(i + 1) % 4])).collect();
        GlyphOutline::new(vec![Contour::new(segs).unwrap()], 'x', 1000, 1000.0)
    }

    fn max_trace_deviation(a: &GlyphOutline, b: &GlyphOutline) -> f64 {
        // every sample of `a` must lie on `b` (nearest by dense sampling)
        let dense: Vec<Point2> = b
            .segments()
            .flat_map(|s| (0..=2000).map(move |i| s.eval(i as f64 / 2000.0)))
            .collect();
        a.segments()
            .flat_map(|s| (0..=200).map(move |i| s.eval(i as f64 / 200.0)))
            .map(|p| dense.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    #[test]
    fn contour_rejects_gaps_and_singletons() {
        let a = CubicSegment::line(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        assert!(Contour::new(vec![a]).is_err());
        let b = CubicSegment::line(Point2::new(1.0, 0.0), Point2::new(0.0, 0.5));
        assert!(Contour::new(vec![a, b]).is_err());
    }

    #[test]
    fn rebalance_noop_cases() {
        let sq = square(0.0, 0.0, 10.0);
        assert_eq!(rebalance_control_points(&sq, 0), sq);
        assert_eq!(rebalance_control_points(&sq, 12), sq);
    }

    #[test]
    fn rebalance_square_to_24_points() {
        let sq = square(0.0, 0.0, 10.0);
        let r = rebalance_control_points(&sq, 24);
        assert!(r.point_count() >= 24);
        // subdividing straight cubics is exact up to rounding
        let mut max_dev: f64 = 0.0;
        for s in r.segments() {
            for i in 0..=1000 {
                let p = s.eval(i as f64 / 1000.0);
                let d = [p.x.abs(), (p.x - 10.0).abs(), p.y.abs(), (p.y - 10.0).abs()]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                max_dev = max_dev.max(d);
            }
        }
        assert!(max_dev <= 1e-12, "{max_dev}");
        assert!(max_trace_deviation(&r, &sq) < 1e-2);
    }

    #[test]
    fn normalize_em_height_maps_to_ninety_percent() {
        let mut sq = square(0.0, 0.0, 1000.0);
        sq.units_per_em = 1000;
        let n = normalize_outline(&sq, 256).unwrap();
        assert!((n.bbox.height() - 230.4).abs() < 1e-9);
        assert!((n.bbox.width() - 230.4).abs() < 1e-9);
        assert!((n.bbox.min.y - 12.8).abs() < 1e-9);
    }

    #[test]
    fn normalize_flips_y_and_round_trips() {
        let sq = square(100.0, 200.0, 300.0);
        let tf = CanvasTransform::for_outline(&sq, 256).unwrap();
        let n = normalize_outline(&sq, 256).unwrap();
        assert_ne!(n.contours[0].orientation(), sq.contours[0].orientation());
        for (a, b) in sq.segments().zip(n.segments()) {
            for (p, q) in a.points().iter().zip(b.points()) {
                assert!(tf.invert(q).distance(*p) < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_empty_and_degenerate() {
        let empty = GlyphOutline::new(vec![], ' ', 1000, 500.0);
        assert_eq!(normalize_outline(&empty, 64).unwrap().contours.len(), 0);
        let flat = {
            let a = CubicSegment::line(Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
            GlyphOutline::new(vec![Contour::new(vec![a, a]).unwrap()], 'x', 1000, 0.0)
        };
        assert_eq!(normalize_outline(&flat, 64), Err(GlyphError::DegenerateBBox));
        assert_eq!(normalize_outline(&empty, 4), Err(GlyphError::CanvasTooSmall(4)));
    }

    #[test]
    fn presplit_bounds_segment_length() {
        let sq = square(0.0, 0.0, 100.0);
        let p = presplit_long_segments(&sq, 20.0);
        assert!(p.segments().all(|s| s.polyline_length(32) <= 20.0));
        assert_eq!(p.segment_count(), 4 * 8);
    }
}
