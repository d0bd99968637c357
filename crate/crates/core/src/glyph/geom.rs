//! Points, cubic segments and bounding boxes.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::GlyphError;

/// A 2D point or vector. Units depend on context (font units or canvas px).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn length(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).length()
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    /// The empty box; `include` grows it.
    pub const EMPTY: BBox = BBox {
        min: Point2::new(f64::INFINITY, f64::INFINITY),
        max: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn from_points<I: IntoIterator<Item = Point2>>(points: I) -> BBox {
        points.into_iter().fold(BBox::EMPTY, |b, p| b.include(p))
    }

    pub fn include(self, p: Point2) -> BBox {
        BBox {
            min: Point2::new(self.min.x.min(p.x), self.min.y.min(p.y)),
            max: Point2::new(self.max.x.max(p.x), self.max.y.max(p.y)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y
    }

    pub fn width(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.max.x - self.min.x
        }
    }

    pub fn height(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.max.y - self.min.y
        }
    }

    pub fn center(&self) -> Point2 {
        self.min.lerp(self.max, 0.5)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn dilate(&self, by: f64) -> BBox {
        BBox {
            min: Point2::new(self.min.x - by, self.min.y - by),
            max: Point2::new(self.max.x + by, self.max.y + by),
        }
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// A cubic Bézier segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub p0: Point2,
    pub p1: Point2,
    pub p2: Point2,
    pub p3: Point2,
}

/// Cubic Bernstein basis at `t`.
#[inline]
pub fn bernstein3(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

impl CubicSegment {
    pub const fn new(p0: Point2, p1: Point2, p2: Point2, p3: Point2) -> Self {
        Self { p0, p1, p2, p3 }
    }

    /// A straight line as a cubic with controls at the thirds.
    pub fn line(a: Point2, b: Point2) -> Self {
        Self::new(a, a.lerp(b, 1.0 / 3.0), a.lerp(b, 2.0 / 3.0), b)
    }

    pub fn points(&self) -> [Point2; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    pub fn is_finite(&self) -> bool {
        self.points().iter().all(|p| p.is_finite())
    }

    /// Start and end coincide. Such segments are allowed but flagged.
    pub fn is_degenerate(&self) -> bool {
        self.p0 == self.p3
    }

    pub fn eval(&self, t: f64) -> Point2 {
        let [b0, b1, b2, b3] = bernstein3(t);
        Point2::new(
            b0 * self.p0.x + b1 * self.p1.x + b2 * self.p2.x + b3 * self.p3.x,
            b0 * self.p0.y + b1 * self.p1.y + b2 * self.p2.y + b3 * self.p3.y,
        )
    }

    pub fn derivative(&self, t: f64) -> Point2 {
        let s = 1.0 - t;
        let d0 = self.p1 - self.p0;
        let d1 = self.p2 - self.p1;
        let d2 = self.p3 - self.p2;
        (d0 * (s * s) + d1 * (2.0 * s * t) + d2 * (t * t)) * 3.0
    }

    pub fn second_derivative(&self, t: f64) -> Point2 {
        let a = self.p2 - self.p1 * 2.0 + self.p0;
        let b = self.p3 - self.p2 * 2.0 + self.p1;
        (a * (1.0 - t) + b * t) * 6.0
    }

    /// de Casteljau split at `t`, which must lie strictly inside (0, 1).
    pub fn split(&self, t: f64) -> Result<(CubicSegment, CubicSegment), GlyphError> {
        if !(t > 0.0 && t < 1.0) {
            return Err(GlyphError::InvalidParameter(t));
        }
        let p01 = self.p0.lerp(self.p1, t);
        let p12 = self.p1.lerp(self.p2, t);
        let p23 = self.p2.lerp(self.p3, t);
        let p012 = p01.lerp(p12, t);
        let p123 = p12.lerp(p23, t);
        let mid = p012.lerp(p123, t);
        Ok((
            CubicSegment::new(self.p0, p01, p012, mid),
            CubicSegment::new(mid, p123, p23, self.p3),
        ))
    }

    pub fn control_bbox(&self) -> BBox {
        BBox::from_points(self.points())
    }

    /// Uniform-parameter polyline with `pieces` chords (`pieces + 1` vertices).
    pub fn flatten(&self, pieces: usize) -> Vec<Point2> {
        let pieces = pieces.max(1);
        (0..=pieces)
            .map(|i| {
                if i == pieces {
                    self.p3
                } else {
                    self.eval(i as f64 / pieces as f64)
                }
            })
            .collect()
    }

    /// Length of the `pieces`-chord flattening.
    pub fn polyline_length(&self, pieces: usize) -> f64 {
        self.flatten(pieces).windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Upper bound on |B''(t)| over [0, 1].
    pub fn second_derivative_bound(&self) -> f64 {
        let a = self.p2 - self.p1 * 2.0 + self.p0;
        let b = self.p3 - self.p2 * 2.0 + self.p1;
        6.0 * a.length().max(b.length())
    }

    /// Signed area contribution (Green's theorem, ∮ x dy − y dx / 2).
    ///
    /// Summed over a closed contour this is the exact enclosed signed area,
    /// positive for counterclockwise traversal in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        let [p0, p1, p2, p3] = self.points();
        (3.0 / 20.0)
            * (p0.cross(p1) * 2.0
                + p0.cross(p2)
                + p1.cross(p2) * 1.0
                + p0.cross(p3) * (1.0 / 3.0)
                + p1.cross(p3)
                + p2.cross(p3) * 2.0)
    }

    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> CubicSegment {
        CubicSegment::new(f(self.p0), f(self.p1), f(self.p2), f(self.p3))
    }
}

/// Exact degree elevation of a quadratic Bézier to a cubic.
pub fn elevate_quadratic(q0: Point2, q1: Point2, q2: Point2) -> CubicSegment {
    CubicSegment::new(q0, q0 + (q1 - q0) * (2.0 / 3.0), q2 + (q1 - q2) * (2.0 / 3.0), q2)
}

/// de Casteljau split; see [`CubicSegment::split`].
pub fn subdivide_segment(seg: &CubicSegment, t: f64) -> Result<(CubicSegment, CubicSegment), GlyphError> {
    seg.split(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_eval(q0: Point2, q1: Point2, q2: Point2, t: f64) -> Point2 {
        let s = 1.0 - t;
        q0 * (s * s) + q1 * (2.0 * s * t) + q2 * (t * t)
    }

    #[test]
    fn elevation_of_degenerate_point() {
        let z = Point2::new(0.0, 0.0);
        let c = elevate_quadratic(z, z, z);
        assert_eq!(c.points(), [z; 4]);
    }

    #[test]
    fn elevation_closed_form() {
        let c = elevate_quadratic(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 0.0));
        assert!((c.p1.x - 2.0 / 3.0).abs() < 1e-15 && (c.p1.y - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.p2.x - 4.0 / 3.0).abs() < 1e-15 && (c.p2.y - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.p3, Point2::new(2.0, 0.0));
    }

    #[test]
    fn elevation_traces_quadratic() {
        let (q0, q1, q2) = (
            Point2::new(3.0, -7.0),
            Point2::new(40.0, 91.5),
            Point2::new(-12.0, 8.25),
        );
        let c = elevate_quadratic(q0, q1, q2);
        let dev = (0..1000)
            .map(|i| i as f64 / 999.0)
            .map(|t| c.eval(t).distance(quad_eval(q0, q1, q2, t)))
            .fold(0.0, f64::max);
        assert!(dev <= 1e-12, "deviation {dev}");
    }

    #[test]
    fn split_straight_segment_at_midpoint() {
        let s = CubicSegment::line(Point2::new(0.0, 0.0), Point2::new(6.0, 3.0));
        let (l, r) = s.split(0.5).unwrap();
        assert_eq!(l.p3, r.p0);
        assert!(l.p3.distance(Point2::new(3.0, 1.5)) < 1e-15);
    }

    #[test]
    fn split_rejects_endpoints() {
        let s = CubicSegment::line(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        assert!(matches!(s.split(0.0), Err(GlyphError::InvalidParameter(_))));
        assert!(matches!(s.split(1.0), Err(GlyphError::InvalidParameter(_))));
        assert!(s.split(f64::NAN).is_err());
    }

    #[test]
    fn signed_area_of_unit_square() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let area: f64 = (0..4)
            .map(|i| CubicSegment::line(pts[i], pts[(i + 1) % 4]).signed_area())
            .sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn signed_area_of_curved_segment_matches_quadrature() {
        let seg = CubicSegment::new(
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 2.0),
            Point2::new(3.0, -1.0),
            Point2::new(4.0, 0.5),
        );
        // closing chord encloses the region
        let closed = seg.signed_area() + CubicSegment::line(seg.p3, seg.p0).signed_area();
        let n = 200_000;
        let mut quad = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let p = seg.eval(t);
            let d = seg.derivative(t);
            quad += 0.5 * (p.x * d.y - p.y * d.x) / n as f64;
        }
        let chord_area = 0.5 * seg.p3.cross(seg.p0);
        assert!((closed - (quad + chord_area)).abs() < 1e-8);
    }
}
