//! Flat trainable coordinate vector with an index map back to contours.
//!
//! Each contour of `n` segments owns `3n` distinct points laid out as
//! `[on_0, c1_0, c2_0, on_1, c1_1, c2_1, ...]`; segment `i` is
//! `(on_i, c1_i, c2_i, on_{(i+1) mod n})`, so each shared on-curve endpoint
//! is stored exactly once and drives both adjacent segments.

use serde::{Deserialize, Serialize};

use super::geom::{CubicSegment, Point2};
use super::{Contour, GlyphError, GlyphOutline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRole {
    /// Shared on-curve endpoint: `p0` of its segment and `p3` of the previous.
    OnCurve,
    Control1,
    Control2,
}

/// One control-point occurrence inside the outline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointRef {
    pub contour: usize,
    pub segment: usize,
    /// 0..=3, the point slot within the segment.
    pub slot: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourLayout {
    /// Index of the contour's first point in the global point list.
    pub first_point: usize,
    pub segments: usize,
}

impl ContourLayout {
    pub fn point_count(&self) -> usize {
        3 * self.segments
    }

    /// Global point indices of segment `seg`'s four slots.
    pub fn segment_points(&self, seg: usize) -> [usize; 4] {
        let base = self.first_point;
        let n = self.point_count();
        [
            base + 3 * seg,
            base + 3 * seg + 1,
            base + 3 * seg + 2,
            base + (3 * seg + 3) % n,
        ]
    }
}

/// Everything needed besides the coordinates to rebuild the outline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub contours: Vec<ContourLayout>,
    pub codepoint: char,
    pub units_per_em: u16,
    pub advance_width: f64,
}

impl ParamLayout {
    pub fn point_count(&self) -> usize {
        self.contours.iter().map(ContourLayout::point_count).sum()
    }

    pub fn value_count(&self) -> usize {
        2 * self.point_count()
    }

    pub fn segment_count(&self) -> usize {
        self.contours.iter().map(|c| c.segments).sum()
    }

    /// Contour owning global point `point`, and the local index within it.
    pub fn locate_point(&self, point: usize) -> Option<(usize, usize)> {
        self.contours.iter().enumerate().find_map(|(ci, c)| {
            (point >= c.first_point && point < c.first_point + c.point_count()).then(|| (ci, point - c.first_point))
        })
    }

    pub fn role(&self, point: usize) -> Option<PointRole> {
        self.locate_point(point).map(|(_, local)| match local % 3 {
            0 => PointRole::OnCurve,
            1 => PointRole::Control1,
            _ => PointRole::Control2,
        })
    }

    /// All control-point occurrences moved by value index `value`.
    pub fn refs(&self, value: usize) -> Vec<PointRef> {
        let point = value / 2;
        let Some((contour, local)) = self.locate_point(point) else {
            return Vec::new();
        };
        let n = self.contours[contour].segments;
        let seg = local / 3;
        match local % 3 {
            0 => vec![
                PointRef {
                    contour,
                    segment: seg,
                    slot: 0,
                },
                PointRef {
                    contour,
                    segment: (seg + n - 1) % n,
                    slot: 3,
                },
            ],
            r => vec![PointRef {
                contour,
                segment: seg,
                slot: r,
            }],
        }
    }

    /// Rebuilds the outline from raw coordinates.
    pub fn reconstruct(&self, values: &[f64]) -> Result<GlyphOutline, GlyphError> {
        if values.len() != self.value_count() {
            return Err(GlyphError::InvalidContour(format!(
                "expected {} values, got {}",
                self.value_count(),
                values.len()
            )));
        }
        let pt = |i: usize| Point2::new(values[2 * i], values[2 * i + 1]);
        let contours = self
            .contours
            .iter()
            .map(|c| {
                Contour::new(
                    (0..c.segments)
                        .map(|s| {
                            let [a, b, cc, d] = c.segment_points(s);
                            CubicSegment::new(pt(a), pt(b), pt(cc), pt(d))
                        })
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GlyphOutline::new(
            contours,
            self.codepoint,
            self.units_per_em,
            self.advance_width,
        ))
    }
}

/// Flat x,y-interleaved coordinates plus their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> Point2 {
        Point2::new(self.values[2 * i], self.values[2 * i + 1])
    }

    pub fn reconstruct(&self) -> Result<GlyphOutline, GlyphError> {
        self.layout.reconstruct(&self.values)
    }
}

/// Flattens an outline into trainable coordinates.
pub fn parameterize(outline: &GlyphOutline) -> ParameterVector {
    let mut values = Vec::with_capacity(2 * outline.point_count());
    let mut contours = Vec::with_capacity(outline.contours.len());
    for c in &outline.contours {
        contours.push(ContourLayout {
            first_point: values.len() / 2,
            segments: c.segments().len(),
        });
        for p in c.control_points() {
            values.push(p.x);
            values.push(p.y);
        }
    }
    ParameterVector {
        values,
        layout: ParamLayout {
            contours,
            codepoint: outline.codepoint,
            units_per_em: outline.units_per_em,
            advance_width: outline.advance_width,
        },
    }
}
