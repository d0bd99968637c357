//! Procedural outlines in canvas pixels (y down): circles, polygons and the
//! silhouette targets used by the demos and the optimization checks.

use std::f64::consts::{PI, TAU};

use crate::glyph::{Contour, CubicSegment, GlyphOutline, Point2};

fn outline(contours: Vec<Vec<CubicSegment>>) -> GlyphOutline {
    let contours = contours
        .into_iter()
        .map(|s| Contour::new(s).expect("procedural contour is closed"))
        .collect();
    GlyphOutline::new(contours, '\u{25CB}', 1000, 1000.0)
}

/// Circle from `segments` cubic arcs (tangent-length approximation).
pub fn circle_segments(center: Point2, radius: f64, segments: usize) -> Vec<CubicSegment> {
    assert!(segments >= 2);
    let step = TAU / segments as f64;
    let k = 4.0 / 3.0 * (step / 4.0).tan() * radius;
    let at = |a: f64| center + Point2::new(a.cos(), a.sin()) * radius;
    let tangent = |a: f64| Point2::new(-a.sin(), a.cos());
    // first and last share the exact same start point
    let points: Vec<Point2> = (0..segments).map(|i| at(i as f64 * step)).collect();
    (0..segments)
        .map(|i| {
            let (a0, a1) = (i as f64 * step, (i + 1) as f64 * step);
            let p0 = points[i];
            let p3 = points[(i + 1) % segments];
            CubicSegment::new(p0, p0 + tangent(a0) * k, p3 - tangent(a1) * k, p3)
        })
        .collect()
}

pub fn circle(center: Point2, radius: f64, segments: usize) -> GlyphOutline {
    outline(vec![circle_segments(center, radius, segments)])
}

pub fn polygon_segments(points: &[Point2]) -> Vec<CubicSegment> {
    let n = points.len();
    (0..n)
        .map(|i| CubicSegment::line(points[i], points[(i + 1) % n]))
        .collect()
}

pub fn polygon(points: &[Point2]) -> GlyphOutline {
    outline(vec![polygon_segments(points)])
}

/// Regular star with `tips` outer points, first tip pointing up.
pub fn star(center: Point2, outer: f64, inner: f64, tips: usize) -> GlyphOutline {
    let pts: Vec<Point2> = (0..2 * tips)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = -PI / 2.0 + i as f64 * PI / tips as f64;
            center + Point2::new(a.cos(), a.sin()) * r
        })
        .collect();
    polygon(&pts)
}

/// Classic parametric heart scaled to fit a box of `size` px.
pub fn heart(center: Point2, size: f64) -> GlyphOutline {
    let n = 96;
    let s = size / 34.0;
    let pts: Vec<Point2> = (0..n)
        .map(|i| {
            let t = i as f64 * TAU / n as f64;
            let x = 16.0 * t.sin().powi(3);
            let y = 13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos() - (4.0 * t).cos();
            center + Point2::new(x * s, -(y + 2.5) * s)
        })
        .collect();
    polygon(&pts)
}

/// Axis-aligned rectangle.
pub fn bar(center: Point2, width: f64, height: f64) -> GlyphOutline {
    let (hw, hh) = (width / 2.0, height / 2.0);
    polygon(&[
        center + Point2::new(-hw, -hh),
        center + Point2::new(hw, -hh),
        center + Point2::new(hw, hh),
        center + Point2::new(-hw, hh),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_points_lie_near_radius() {
        let c = Point2::new(128.0, 128.0);
        let o = circle(c, 64.0, 4);
        for s in o.contours[0].segments() {
            for i in 0..=100 {
                let d = s.eval(i as f64 / 100.0).distance(c);
                // four-arc approximation error is about 2.7e-4 of the radius
                assert!((d - 64.0).abs() < 0.02, "{d}");
            }
        }
    }

    #[test]
    fn targets_close_exactly() {
        let c = Point2::new(128.0, 128.0);
        for o in [star(c, 90.0, 40.0, 5), heart(c, 180.0), bar(c, 200.0, 60.0)] {
            let segs = o.contours[0].segments();
            assert_eq!(segs.last().unwrap().p3, segs[0].p0);
        }
    }
}
