//! Minimal TrueType reader: table directory, `head`, `maxp`, `hhea`, `hmtx`,
//! `cmap` (formats 4 and 12), `loca` and `glyf`.
//!
//! Quadratic contours are converted to cubics on load. Composite glyphs are
//! resolved one level deep.

use std::collections::HashMap;

use super::geom::{elevate_quadratic, CubicSegment, Point2};
use super::{Contour, GlyphError, GlyphOutline};

fn malformed(msg: impl Into<String>) -> GlyphError {
    GlyphError::MalformedFont(msg.into())
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn at(data: &'a [u8], pos: usize) -> Self {
        Self { data, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], GlyphError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| malformed(format!("read of {n} bytes at {} past end", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<(), GlyphError> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8, GlyphError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, GlyphError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn i16(&mut self) -> Result<i16, GlyphError> {
        Ok(self.u16()? as i16)
    }

    fn u32(&mut self) -> Result<u32, GlyphError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// F2DOT14 fixed point.
    fn f2dot14(&mut self) -> Result<f64, GlyphError> {
        Ok(self.i16()? as f64 / 16384.0)
    }
}

/// A parsed TrueType font. Borrowing the bytes keeps loading zero-copy.
pub struct Font<'a> {
    data: &'a [u8],
    tables: HashMap<[u8; 4], (usize, usize)>,
    units_per_em: u16,
    long_loca: bool,
    num_glyphs: u16,
    num_h_metrics: u16,
}

impl<'a> Font<'a> {
    pub fn parse(data: &'a [u8]) -> Result<Self, GlyphError> {
        let mut r = Reader::new(data);
        let version = r.u32()?;
        match version {
            0x0001_0000 | 0x7472_7565 => {}
            0x4F54_544F => {
                return Err(GlyphError::UnsupportedOutlineFormat(
                    "CFF-flavoured OpenType (cubic-native outlines)".into(),
                ))
            }
            v => return Err(malformed(format!("unknown sfnt version {v:#010x}"))),
        }
        let num_tables = r.u16()?;
        r.skip(6)?;
        let mut tables = HashMap::new();
        for _ in 0..num_tables {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let _checksum = r.u32()?;
            let offset = r.u32()? as usize;
            let length = r.u32()? as usize;
            if offset.checked_add(length).map_or(true, |e| e > data.len()) {
                return Err(malformed(format!(
                    "table {} out of bounds",
                    String::from_utf8_lossy(&tag)
                )));
            }
            tables.insert(tag, (offset, length));
        }
        if !tables.contains_key(b"glyf") {
            return Err(if tables.contains_key(b"CFF ") || tables.contains_key(b"CFF2") {
                GlyphError::UnsupportedOutlineFormat("CFF outlines".into())
            } else {
                malformed("missing glyf table")
            });
        }
        let mut font = Font {
            data,
            tables,
            units_per_em: 0,
            long_loca: false,
            num_glyphs: 0,
            num_h_metrics: 0,
        };
        let mut head = Reader::new(font.table(b"head")?);
        head.skip(18)?;
        font.units_per_em = head.u16()?;
        if font.units_per_em == 0 {
            return Err(malformed("unitsPerEm is zero"));
        }
        head.skip(30)?;
        font.long_loca = match head.i16()? {
            0 => false,
            1 => true,
            f => return Err(malformed(format!("indexToLocFormat {f}"))),
        };
        let mut maxp = Reader::new(font.table(b"maxp")?);
        maxp.skip(4)?;
        font.num_glyphs = maxp.u16()?;
        let mut hhea = Reader::new(font.table(b"hhea")?);
        hhea.skip(34)?;
        font.num_h_metrics = hhea.u16()?;
        Ok(font)
    }

    fn table(&self, tag: &[u8; 4]) -> Result<&'a [u8], GlyphError> {
        let &(off, len) = self
            .tables
            .get(tag)
            .ok_or_else(|| malformed(format!("missing {} table", String::from_utf8_lossy(tag))))?;
        Ok(&self.data[off..off + len])
    }

    pub fn units_per_em(&self) -> u16 {
        self.units_per_em
    }

    pub fn num_glyphs(&self) -> u16 {
        self.num_glyphs
    }

    /// Glyph id for a codepoint; `None` when unmapped (or mapped to .notdef).
    pub fn glyph_index(&self, ch: char) -> Result<Option<u16>, GlyphError> {
        let cmap = self.table(b"cmap")?;
        let mut r = Reader::new(cmap);
        r.skip(2)?;
        let n = r.u16()?;
        let mut best: Option<(u8, usize)> = None;
        for _ in 0..n {
            let platform = r.u16()?;
            let encoding = r.u16()?;
            let offset = r.u32()? as usize;
            let format = Reader::at(cmap, offset).u16()?;
            // prefer full-repertoire format 12, then BMP format 4
            let rank = match (platform, encoding, format) {
                (3, 10, 12) | (0, 4, 12) | (0, 6, 12) => 3,
                (3, 1, 4) | (0, 3, 4) | (0, _, 4) => 2,
                _ => 0,
            };
            if rank > 0 && best.map_or(true, |(b, _)| rank > b) {
                best = Some((rank, offset));
            }
        }
        let (_, offset) = best.ok_or_else(|| malformed("no usable unicode cmap subtable"))?;
        let cp = ch as u32;
        let mut r = Reader::at(cmap, offset);
        let gid = match r.u16()? {
            4 => {
                if cp > 0xFFFF {
                    return Ok(None);
                }
                cmap_format4(cmap, offset, cp as u16)?
            }
            12 => cmap_format12(cmap, offset, cp)?,
            f => return Err(malformed(format!("cmap format {f}"))),
        };
        Ok((gid != 0).then_some(gid))
    }

    pub fn advance_width(&self, gid: u16) -> Result<f64, GlyphError> {
        let hmtx = self.table(b"hmtx")?;
        if self.num_h_metrics == 0 {
            return Err(malformed("numberOfHMetrics is zero"));
        }
        let idx = gid.min(self.num_h_metrics - 1) as usize;
        Ok(Reader::at(hmtx, idx * 4).u16()? as f64)
    }

    fn glyph_data(&self, gid: u16) -> Result<&'a [u8], GlyphError> {
        if gid >= self.num_glyphs {
            return Err(malformed(format!("glyph id {gid} out of range")));
        }
        let loca = self.table(b"loca")?;
        let (start, end) = if self.long_loca {
            let mut r = Reader::at(loca, gid as usize * 4);
            (r.u32()? as usize, r.u32()? as usize)
        } else {
            let mut r = Reader::at(loca, gid as usize * 2);
            (r.u16()? as usize * 2, r.u16()? as usize * 2)
        };
        let glyf = self.table(b"glyf")?;
        if start > end || end > glyf.len() {
            return Err(malformed(format!("loca entry for glyph {gid} out of bounds")));
        }
        Ok(&glyf[start..end])
    }

    /// Loads a codepoint as closed cubic contours in font units.
    pub fn glyph(&self, ch: char) -> Result<GlyphOutline, GlyphError> {
        let gid = self.glyph_index(ch)?.ok_or(GlyphError::MissingGlyph(ch))?;
        let contours = match parse_glyph(self.glyph_data(gid)?)? {
            RawGlyph::Empty => Vec::new(),
            RawGlyph::Simple(points) => points,
            RawGlyph::Composite(components) => {
                let mut out = Vec::new();
                for comp in components {
                    match parse_glyph(self.glyph_data(comp.glyph_id)?)? {
                        RawGlyph::Empty => {}
                        RawGlyph::Simple(contours) => out.extend(contours.into_iter().map(|c| comp.transform(c))),
                        RawGlyph::Composite(_) => {
                            return Err(GlyphError::UnsupportedOutlineFormat(
                                "composite glyph nested more than one level".into(),
                            ))
                        }
                    }
                }
                out
            }
        };
        let contours = contours
            .iter()
            .filter_map(|pts| quadratic_contour_to_cubics(pts))
            .map(Contour::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GlyphOutline::new(
            contours,
            ch,
            self.units_per_em,
            self.advance_width(gid)?,
        ))
    }
}

/// Parses `font_bytes` and loads one glyph.
pub fn load_glyph(font_bytes: &[u8], codepoint: char) -> Result<GlyphOutline, GlyphError> {
    Font::parse(font_bytes)?.glyph(codepoint)
}

fn cmap_format4(cmap: &[u8], offset: usize, cp: u16) -> Result<u16, GlyphError> {
    let mut r = Reader::at(cmap, offset + 6);
    let seg_count = (r.u16()? / 2) as usize;
    let ends = offset + 14;
    let starts = ends + seg_count * 2 + 2;
    let deltas = starts + seg_count * 2;
    let range_offsets = deltas + seg_count * 2;
    for i in 0..seg_count {
        let end = Reader::at(cmap, ends + i * 2).u16()?;
        if cp > end {
            continue;
        }
        let start = Reader::at(cmap, starts + i * 2).u16()?;
        if cp < start {
            return Ok(0);
        }
        let delta = Reader::at(cmap, deltas + i * 2).u16()?;
        let ro_pos = range_offsets + i * 2;
        let ro = Reader::at(cmap, ro_pos).u16()?;
        if ro == 0 {
            return Ok(cp.wrapping_add(delta));
        }
        let pos = ro_pos + ro as usize + (cp - start) as usize * 2;
        let gid = Reader::at(cmap, pos).u16()?;
        return Ok(if gid == 0 { 0 } else { gid.wrapping_add(delta) });
    }
    Ok(0)
}

fn cmap_format12(cmap: &[u8], offset: usize, cp: u32) -> Result<u16, GlyphError> {
    let mut r = Reader::at(cmap, offset + 12);
    let groups = r.u32()?;
    for _ in 0..groups {
        let start = r.u32()?;
        let end = r.u32()?;
        let gid = r.u32()?;
        if (start..=end).contains(&cp) {
            return u16::try_from(gid + (cp - start)).map_err(|_| malformed("format 12 glyph id exceeds u16"));
        }
    }
    Ok(0)
}

#[derive(Clone, Copy, Debug)]
struct RawPoint {
    x: f64,
    y: f64,
    on_curve: bool,
}

impl RawPoint {
    fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

struct Component {
    glyph_id: u16,
    // x' = a x + c y + dx ; y' = b x + d y + dy
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    dx: f64,
    dy: f64,
}

impl Component {
    fn transform(&self, pts: Vec<RawPoint>) -> Vec<RawPoint> {
        pts.into_iter()
            .map(|p| RawPoint {
                x: self.a * p.x + self.c * p.y + self.dx,
                y: self.b * p.x + self.d * p.y + self.dy,
                on_curve: p.on_curve,
            })
            .collect()
    }
}

enum RawGlyph {
    Empty,
    Simple(Vec<Vec<RawPoint>>),
    Composite(Vec<Component>),
}

const ON_CURVE: u8 = 0x01;
const X_SHORT: u8 = 0x02;
const Y_SHORT: u8 = 0x04;
const REPEAT: u8 = 0x08;
const X_SAME_OR_POSITIVE: u8 = 0x10;
const Y_SAME_OR_POSITIVE: u8 = 0x20;

const ARG_1_AND_2_ARE_WORDS: u16 = 0x0001;
const ARGS_ARE_XY_VALUES: u16 = 0x0002;
const WE_HAVE_A_SCALE: u16 = 0x0008;
const MORE_COMPONENTS: u16 = 0x0020;
const WE_HAVE_AN_X_AND_Y_SCALE: u16 = 0x0040;
const WE_HAVE_A_TWO_BY_TWO: u16 = 0x0080;

fn parse_glyph(data: &[u8]) -> Result<RawGlyph, GlyphError> {
    if data.is_empty() {
        return Ok(RawGlyph::Empty);
    }
    let mut r = Reader::new(data);
    let n_contours = r.i16()?;
    r.skip(8)?;
    if n_contours == 0 {
        return Ok(RawGlyph::Empty);
    }
    if n_contours < 0 {
        return parse_composite(r).map(RawGlyph::Composite);
    }
    let mut end_points = Vec::with_capacity(n_contours as usize);
    for _ in 0..n_contours {
        end_points.push(r.u16()? as usize);
    }
    if end_points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(malformed("contour end points not increasing"));
    }
    let n_points = end_points.last().map_or(0, |&e| e + 1);
    let instr_len = r.u16()? as usize;
    r.skip(instr_len)?;

    let mut flags = Vec::with_capacity(n_points);
    while flags.len() < n_points {
        let f = r.u8()?;
        flags.push(f);
        if f & REPEAT != 0 {
            let count = r.u8()?;
            for _ in 0..count {
                flags.push(f);
            }
        }
    }
    flags.truncate(n_points);

    let xs = read_deltas(&mut r, &flags, X_SHORT, X_SAME_OR_POSITIVE)?;
    let ys = read_deltas(&mut r, &flags, Y_SHORT, Y_SAME_OR_POSITIVE)?;

    let mut contours = Vec::with_capacity(end_points.len());
    let mut start = 0;
    for &end in &end_points {
        contours.push(
            (start..=end)
                .map(|i| RawPoint {
                    x: xs[i] as f64,
                    y: ys[i] as f64,
                    on_curve: flags[i] & ON_CURVE != 0,
                })
                .collect(),
        );
        start = end + 1;
    }
    Ok(RawGlyph::Simple(contours))
}

fn read_deltas(r: &mut Reader<'_>, flags: &[u8], short: u8, same_or_pos: u8) -> Result<Vec<i32>, GlyphError> {
    let mut out = Vec::with_capacity(flags.len());
    let mut v = 0i32;
    for &f in flags {
        if f & short != 0 {
            let d = r.u8()? as i32;
            v += if f & same_or_pos != 0 { d } else { -d };
        } else if f & same_or_pos == 0 {
            v += r.i16()? as i32;
        }
        out.push(v);
    }
    Ok(out)
}

fn parse_composite(mut r: Reader<'_>) -> Result<Vec<Component>, GlyphError> {
    let mut out = Vec::new();
    loop {
        let flags = r.u16()?;
        let glyph_id = r.u16()?;
        let (arg1, arg2) = if flags & ARG_1_AND_2_ARE_WORDS != 0 {
            (r.i16()? as f64, r.i16()? as f64)
        } else {
            (r.u8()? as i8 as f64, r.u8()? as i8 as f64)
        };
        if flags & ARGS_ARE_XY_VALUES == 0 {
            return Err(GlyphError::UnsupportedOutlineFormat(
                "composite component positioned by point matching".into(),
            ));
        }
        let (mut a, mut b, mut c, mut d) = (1.0, 0.0, 0.0, 1.0);
        if flags & WE_HAVE_A_SCALE != 0 {
            a = r.f2dot14()?;
            d = a;
        } else if flags & WE_HAVE_AN_X_AND_Y_SCALE != 0 {
            a = r.f2dot14()?;
            d = r.f2dot14()?;
        } else if flags & WE_HAVE_A_TWO_BY_TWO != 0 {
            a = r.f2dot14()?;
            b = r.f2dot14()?;
            c = r.f2dot14()?;
            d = r.f2dot14()?;
        }
        out.push(Component {
            glyph_id,
            a,
            b,
            c,
            d,
            dx: arg1,
            dy: arg2,
        });
        if flags & MORE_COMPONENTS == 0 {
            return Ok(out);
        }
    }
}

/// Converts one TrueType contour (on/off-curve quadratic points) into closed
/// cubics. Implied on-curve midpoints between consecutive off-curve points
/// are materialized. Contours that cannot form two segments are dropped.
fn quadratic_contour_to_cubics(pts: &[RawPoint]) -> Option<Vec<CubicSegment>> {
    let n = pts.len();
    if n < 2 {
        return None;
    }
    // start on an on-curve point, or at an implied midpoint if there is none
    let (start, first_on) = match pts.iter().position(|p| p.on_curve) {
        Some(i) => (i, pts[i].point()),
        None => (0, pts[0].point().lerp(pts[1].point(), 0.5)),
    };
    let all_off = !pts[start].on_curve;

    let mut segs = Vec::new();
    let mut current = first_on;
    let mut pending: Option<Point2> = None;
    // walk the cycle once, beginning after the start point
    let steps = if all_off { n } else { n - 1 };
    let offset = if all_off { 1 } else { start + 1 };
    for k in 0..steps {
        let p = pts[(offset + k) % n];
        let pt = p.point();
        match (p.on_curve, pending) {
            (true, None) => {
                segs.push(CubicSegment::line(current, pt));
                current = pt;
            }
            (true, Some(ctrl)) => {
                segs.push(elevate_quadratic(current, ctrl, pt));
                current = pt;
                pending = None;
            }
            (false, None) => pending = Some(pt),
            (false, Some(ctrl)) => {
                let mid = ctrl.lerp(pt, 0.5);
                segs.push(elevate_quadratic(current, ctrl, mid));
                current = mid;
                pending = Some(pt);
            }
        }
    }
    // close back to the start point
    match pending {
        Some(ctrl) => segs.push(elevate_quadratic(current, ctrl, first_on)),
        None if current != first_on => segs.push(CubicSegment::line(current, first_on)),
        None => {}
    }
    // exact closure: rounding in the lerp can never break this since the
    // closing segment ends on `first_on` itself
    if segs.len() < 2 {
        return None;
    }
    Some(segs)
}
