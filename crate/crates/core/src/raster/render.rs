//! Soft-coverage rendering: `pixel = logistic(-sd / sigma)` with the signed
//! distance taken to the nearest cubic under nonzero winding, plus the
//! analytic adjoint with respect to the control points.

use rayon::prelude::*;

use super::nearest::{nearest_within, push_crossings, winding_at, Crossing, Flattened};
use super::{AdjointResult, RasterConfig, RasterError, RasterImage};
use crate::glyph::{bernstein3, BBox, CubicSegment, ParamLayout, ParameterVector, Point2};

/// Side of the acceleration grid cells, px.
const CELL: f64 = 4.0;
/// Flattening error target for the per-segment polylines, px.
const FLATTEN_ERROR: f64 = 0.25;

struct SceneSegment {
    seg: CubicSegment,
    /// Global control-point indices of the four slots.
    points: [usize; 4],
    flat: Flattened,
    bbox: BBox,
}

/// Segments prepared for nearest-point queries.
pub(crate) struct Scene {
    segments: Vec<SceneSegment>,
}

impl Scene {
    pub(crate) fn from_params(values: &[f64], layout: &ParamLayout) -> Result<Scene, RasterError> {
        if values.len() != layout.value_count() {
            return Err(RasterError::InvalidGeometry(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.value_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::InvalidGeometry(format!("value {i} is not finite")));
        }
        let pt = |i: usize| Point2::new(values[2 * i], values[2 * i + 1]);
        let mut segments = Vec::with_capacity(layout.segment_count());
        for c in &layout.contours {
            if c.segments < 2 {
                return Err(RasterError::InvalidGeometry(
                    "contour with fewer than 2 segments".into(),
                ));
            }
            for s in 0..c.segments {
                let points = c.segment_points(s);
                let seg = CubicSegment::new(pt(points[0]), pt(points[1]), pt(points[2]), pt(points[3]));
                segments.push(SceneSegment {
                    flat: Flattened::new(&seg, FLATTEN_ERROR),
                    bbox: seg.control_bbox(),
                    seg,
                    points,
                });
            }
        }
        Ok(Scene { segments })
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    fn row_crossings(&self, y: f64, out: &mut Vec<Crossing>) {
        out.clear();
        for s in &self.segments {
            if y >= s.bbox.min.y && y < s.bbox.max.y {
                push_crossings(&s.seg, y, out);
            }
        }
    }

    /// Exact nearest segment over all segments.
    fn nearest(&self, q: Point2) -> Hit {
        let mut best = Hit::none(q);
        for (i, s) in self.segments.iter().enumerate() {
            self.visit(i, s, q, &mut best);
        }
        best
    }

    /// Exact nearest segment among a cell's candidates, which are sorted by
    /// a lower bound on their distance to any point of the cell.
    fn nearest_in(&self, q: Point2, candidates: &[Candidate]) -> Hit {
        let mut best = Hit::none(q);
        for c in candidates {
            if c.lower_bound >= best.distance {
                break;
            }
            let i = c.segment as usize;
            self.visit(i, &self.segments[i], q, &mut best);
        }
        best
    }

    #[inline]
    fn visit(&self, i: usize, s: &SceneSegment, q: Point2, best: &mut Hit) {
        if s.bbox.distance_to(q) >= best.distance {
            return;
        }
        let Some(n) = nearest_within(&s.seg, &s.flat, q, best.distance) else {
            return;
        };
        if n.distance < best.distance {
            *best = Hit {
                segment: i as u32,
                t: n.t,
                point: n.point,
                distance: n.distance,
            };
        }
    }

    /// Signed distance at one point; negative inside (nonzero winding).
    pub(crate) fn signed_distance(&self, q: Point2) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        let mut crossings = Vec::new();
        self.row_crossings(q.y, &mut crossings);
        let hit = self.nearest(q);
        if winding_at(&crossings, q.x) != 0 {
            -hit.distance
        } else {
            hit.distance
        }
    }

    /// For each grid cell, the segments that can own the nearest point of
    /// any query inside it.
    fn candidate_grid(&self, width: u32, height: u32) -> CandidateGrid {
        let cols = (width as f64 / CELL).ceil() as usize;
        let rows = (height as f64 / CELL).ceil() as usize;
        let half_diag = CELL * std::f64::consts::FRAC_1_SQRT_2;
        let n = self.segments.len();
        let mut order: Vec<(f64, u32)> = Vec::with_capacity(n);
        let mut polyd: Vec<f64> = vec![f64::INFINITY; n];
        let mut offsets = Vec::with_capacity(cols * rows + 1);
        let mut lists: Vec<Candidate> = Vec::new();
        offsets.push(0u32);
        for r in 0..rows {
            for c in 0..cols {
                let center = Point2::new((c as f64 + 0.5) * CELL, (r as f64 + 0.5) * CELL);
                order.clear();
                order.extend(
                    self.segments
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.bbox.distance_to(center), i as u32)),
                );
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                // upper bound on the nearest distance for every point in the cell
                let mut ub = f64::INFINITY;
                for &(bd, i) in &order {
                    if bd - half_diag > ub {
                        polyd[i as usize] = f64::INFINITY;
                        continue;
                    }
                    let s = &self.segments[i as usize];
                    let d = s.flat.distance(center).0;
                    polyd[i as usize] = d;
                    ub = ub.min(d + s.flat.error + half_diag);
                }
                let start = lists.len();
                for &(_, i) in &order {
                    let s = &self.segments[i as usize];
                    let lb = polyd[i as usize] - s.flat.error - half_diag;
                    if lb <= ub {
                        lists.push(Candidate {
                            segment: i,
                            lower_bound: lb,
                        });
                    }
                }
                lists[start..].sort_by(|a, b| a.lower_bound.total_cmp(&b.lower_bound).then(a.segment.cmp(&b.segment)));
                offsets.push(lists.len() as u32);
            }
        }
        CandidateGrid {
            cols,
            rows,
            offsets,
            lists,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    segment: u32,
    /// Lower bound on the segment's distance from any point in the cell.
    lower_bound: f64,
}

struct CandidateGrid {
    cols: usize,
    rows: usize,
    offsets: Vec<u32>,
    lists: Vec<Candidate>,
}

impl CandidateGrid {
    fn candidates(&self, q: Point2) -> &[Candidate] {
        let c = ((q.x / CELL).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((q.y / CELL).floor().max(0.0) as usize).min(self.rows - 1);
        let k = r * self.cols + c;
        &self.lists[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    segment: u32,
    t: f64,
    point: Point2,
    distance: f64,
}

impl Hit {
    fn none(q: Point2) -> Self {
        Self {
            segment: u32::MAX,
            t: 0.0,
            point: q,
            distance: f64::INFINITY,
        }
    }
}

/// Per-sample record kept for the adjoint pass.
#[derive(Clone, Copy, Debug)]
struct SampleRecord {
    segment: u32,
    t: f64,
    /// d(sd)/d(curve point): sign * (B(t) - q) / |B(t) - q|.
    dir: Point2,
    /// d(pixel)/d(sd) for this sample, already divided by the sample count.
    coef: f64,
}

/// A rendered image together with everything the adjoint needs.
pub struct Render {
    image: RasterImage,
    samples_per_pixel: usize,
    records: Vec<SampleRecord>,
    point_segments: Vec<[usize; 4]>,
    value_count: usize,
}

impl Render {
    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn into_image(self) -> RasterImage {
        self.image
    }

    /// `grad[i] = sum_p upstream[p] * d pixel[p] / d values[i]`.
    ///
    /// The nearest-curve parameter is held fixed (envelope theorem), so only
    /// the nearest segment of each sample receives gradient.
    pub fn backprop(&self, upstream: &[f64]) -> Result<AdjointResult, RasterError> {
        let (w, h) = (self.image.width, self.image.height);
        if upstream.len() != (w * h) as usize {
            return Err(RasterError::ShapeMismatch {
                expected: (w * h) as usize,
                got: upstream.len(),
            });
        }
        if upstream.iter().any(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite("upstream gradient".into()));
        }
        let mut grad = vec![0.0; self.value_count];
        let spp = self.samples_per_pixel;
        for (p, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            for rec in &self.records[p * spp..(p + 1) * spp] {
                if rec.coef == 0.0 || rec.segment == u32::MAX {
                    continue;
                }
                let pts = self.point_segments[rec.segment as usize];
                let basis = bernstein3(rec.t);
                let k = u * rec.coef;
                for slot in 0..4 {
                    let g = k * basis[slot];
                    grad[2 * pts[slot]] += g * rec.dir.x;
                    grad[2 * pts[slot] + 1] += g * rec.dir.y;
                }
            }
        }
        Ok(AdjointResult { grad })
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Renders `values` (laid out by `layout`) and keeps the adjoint records.
pub fn render(values: &[f64], layout: &ParamLayout, cfg: &RasterConfig) -> Result<Render, RasterError> {
    render_impl(values, layout, cfg, true)
}

const NO_RECORD: SampleRecord = SampleRecord {
    segment: u32::MAX,
    t: 0.0,
    dir: Point2::new(0.0, 0.0),
    coef: 0.0,
};

fn render_impl(values: &[f64], layout: &ParamLayout, cfg: &RasterConfig, adjoint: bool) -> Result<Render, RasterError> {
    cfg.validate()?;
    let scene = Scene::from_params(values, layout)?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let ss = cfg.supersample as usize;
    let spp = ss * ss;
    let sigma = cfg.edge_softness;
    let point_segments: Vec<[usize; 4]> = scene.segments.iter().map(|s| s.points).collect();
    let mut pixels = vec![0.0; w * h];
    let mut records = if adjoint {
        vec![NO_RECORD; w * h * spp]
    } else {
        Vec::new()
    };
    if !scene.is_empty() {
        let grid = scene.candidate_grid(cfg.width, cfg.height);
        let rec_row = if adjoint { w * spp } else { 0 };
        let shade_row = |y: usize, row: &mut [f64], rec: &mut [SampleRecord]| {
            let mut crossings: Vec<Vec<Crossing>> = vec![Vec::new(); ss];
            for (sy, c) in crossings.iter_mut().enumerate() {
                scene.row_crossings(y as f64 + (sy as f64 + 0.5) / ss as f64, c);
            }
            for (x, px) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (sy, row_cross) in crossings.iter().enumerate() {
                    for sx in 0..ss {
                        let q = Point2::new(
                            x as f64 + (sx as f64 + 0.5) / ss as f64,
                            y as f64 + (sy as f64 + 0.5) / ss as f64,
                        );
                        let hit = scene.nearest_in(q, grid.candidates(q));
                        let inside = winding_at(row_cross, q.x) != 0;
                        let sd = if inside { -hit.distance } else { hit.distance };
                        let v = logistic(-sd / sigma);
                        acc += v;
                        // a sample exactly on the curve has no defined normal
                        if adjoint && hit.distance > 0.0 {
                            let sign = if inside { -1.0 } else { 1.0 };
                            rec[x * spp + sy * ss + sx] = SampleRecord {
                                segment: hit.segment,
                                t: hit.t,
                                dir: (hit.point - q) * (sign / hit.distance),
                                coef: -v * (1.0 - v) / (sigma * spp as f64),
                            };
                        }
                    }
                }
                *px = acc / spp as f64;
            }
        };
        if adjoint {
            pixels
                .par_chunks_mut(w)
                .zip(records.par_chunks_mut(rec_row))
                .enumerate()
                .for_each(|(y, (row, rec))| shade_row(y, row, rec));
        } else {
            pixels
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(y, row)| shade_row(y, row, &mut []));
        }
    }
    Ok(Render {
        image: RasterImage {
            width: cfg.width,
            height: cfg.height,
            pixels,
        },
        samples_per_pixel: spp,
        records,
        point_segments,
        value_count: values.len(),
    })
}

/// Soft-coverage image of a parameter vector.
pub fn rasterize(params: &ParameterVector, cfg: &RasterConfig) -> Result<RasterImage, RasterError> {
    render_impl(&params.values, &params.layout, cfg, false).map(Render::into_image)
}

/// Gradient of `sum_p upstream[p] * pixel[p]` with respect to the parameters.
pub fn backprop(params: &ParameterVector, cfg: &RasterConfig, upstream: &[f64]) -> Result<AdjointResult, RasterError> {
    render(&params.values, &params.layout, cfg)?.backprop(upstream)
}
