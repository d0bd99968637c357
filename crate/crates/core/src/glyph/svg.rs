use std::fmt::Write;

use super::GlyphOutline;

/// Absolute `M`/`C`/`Z` path data with six decimal places.
pub fn to_svg_path(outline: &GlyphOutline) -> String {
    let mut d = String::new();
    for contour in &outline.contours {
        let segs = contour.segments();
        let start = segs[0].p0;
        if !d.is_empty() {
            d.push(' ');
        }
        write!(d, "M {:.6} {:.6}", start.x, start.y).unwrap();
        for s in segs {
            write!(
                d,
                " C {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                s.p1.x, s.p1.y, s.p2.x, s.p2.y, s.p3.x, s.p3.y
            )
            .unwrap();
        }
        d.push_str(" Z");
    }
    d
}

/// A standalone SVG document with the glyph filled by the nonzero rule.
pub fn to_svg_document(outline: &GlyphOutline, width: u32, height: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n  <path fill-rule=\"nonzero\" fill=\"black\" d=\"{}\"/>\n</svg>\n",
        to_svg_path(outline)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::{Contour, CubicSegment, Point2};

    #[test]
    fn path_commands() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(3.0, 0.0);
        let c = Point2::new(0.0, 3.0);
        let segs = vec![
            CubicSegment::line(a, b),
            CubicSegment::line(b, c),
            CubicSegment::line(c, a),
        ];
        let o = GlyphOutline::new(vec![Contour::new(segs).unwrap()], 'x', 1000, 0.0);
        let d = to_svg_path(&o);
        assert!(d.starts_with("M 0.000000 0.000000 C 1.000000 0.000000 2.000000 0.000000 3.000000 0.000000"));
        assert!(d.ends_with(" Z"));
        assert_eq!(d.matches(" C ").count(), 3);
        assert!(to_svg_path(&GlyphOutline::new(vec![], ' ', 1000, 0.0)).is_empty());
    }
}
