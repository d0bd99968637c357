//! Parsed outlines checked against an independent dump of the test font.

use serde_json::Value;
use wordart_core::glyph::Font;

const FONT: &[u8] = include_bytes!("../testdata/WordartTestSans.ttf");
const DUMP: &str = include_str!("../testdata/reference_dump.json");

fn dump() -> Value {
    serde_json::from_str(DUMP).unwrap()
}

#[test]
fn outlines_match_reference_dump() {
    let font = Font::parse(FONT).unwrap();
    let dump = dump();
    assert_eq!(font.units_per_em() as u64, dump["units_per_em"].as_u64().unwrap());
    let glyphs = dump["glyphs"].as_object().unwrap();
    let mut checked = 0;
    // Both sides agree on winding up to one global sign convention.
    let mut sign: Option<f64> = None;
    for (key, g) in glyphs {
        let ch = key.chars().next().unwrap();
        let outline = font.glyph(ch).unwrap();
        assert_eq!(outline.advance_width, g["advance"].as_f64().unwrap(), "{ch:?} advance");
        // Zero-area contours are dropped on load.
        let areas: Vec<f64> = g["contour_areas"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a.as_f64().unwrap())
            .filter(|a| *a != 0.0)
            .collect();
        assert_eq!(outline.contours.len(), areas.len(), "{ch:?} contours");
        for (c, &want) in outline.contours.iter().zip(&areas) {
            let got = c.signed_area();
            let s = *sign.get_or_insert(got.signum() * want.signum());
            assert!(
                (got - s * want).abs() <= 1e-6 * want.abs().max(1.0),
                "{ch:?}: {got} vs {want}"
            );
        }
        if let Some(b) = g["control_bounds"].as_array() {
            let b: Vec<f64> = b.iter().map(|v| v.as_f64().unwrap()).collect();
            // Cubic control points lie inside the quadratic control hull.
            let bb = outline.bbox;
            assert!(
                bb.min.x >= b[0] - 1e-9 && bb.min.y >= b[1] - 1e-9,
                "{ch:?} {bb:?} vs {b:?}"
            );
            assert!(
                bb.max.x <= b[2] + 1e-9 && bb.max.y <= b[3] + 1e-9,
                "{ch:?} {bb:?} vs {b:?}"
            );
            for seg in outline.segments() {
                for p in [seg.p0, seg.p3] {
                    assert!(p.x >= b[0] && p.x <= b[2] && p.y >= b[1] && p.y <= b[3]);
                }
            }
        } else {
            assert!(outline.is_empty(), "{ch:?} should be empty");
        }
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} glyphs");
}

#[test]
fn letter_o_has_an_outer_contour_and_an_opposite_hole() {
    let font = Font::parse(FONT).unwrap();
    let o = font.glyph('O').unwrap();
    assert_eq!(o.contours.len(), 2);
    let outer = o.outer_contour().unwrap();
    assert_eq!(o.holes(), vec![1 - outer]);
    let (a, b) = (o.contours[0].orientation(), o.contours[1].orientation());
    assert_ne!(a, b);
    assert!(o.contours[outer].signed_area().abs() > o.contours[1 - outer].signed_area().abs());
}

#[test]
fn missing_glyphs_and_bad_fonts_are_errors() {
    let font = Font::parse(FONT).unwrap();
    assert!(font.glyph('字').is_err());
    assert!(Font::parse(&FONT[..200]).is_err());
    assert!(Font::parse(b"not a font at all").is_err());
}
