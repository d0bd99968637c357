//! Closest point on a cubic segment and horizontal-ray crossings.

use crate::glyph::{CubicSegment, Point2};

/// Closest point on one segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub t: f64,
    pub point: Point2,
    pub distance: f64,
}

/// Power-basis coefficients: `B(t) = c0 + c1 t + c2 t^2 + c3 t^3`.
#[derive(Clone, Copy, Debug)]
struct Power {
    c: [Point2; 4],
}

impl Power {
    fn new(s: &CubicSegment) -> Self {
        let c1 = (s.p1 - s.p0) * 3.0;
        let c2 = (s.p2 - s.p1 * 2.0 + s.p0) * 3.0;
        let c3 = s.p3 - s.p0 + (s.p1 - s.p2) * 3.0;
        Self { c: [s.p0, c1, c2, c3] }
    }

    #[inline]
    fn eval(&self, t: f64) -> Point2 {
        let [c0, c1, c2, c3] = self.c;
        c0 + (c1 + (c2 + c3 * t) * t) * t
    }

    /// Point, first and second derivative.
    #[inline]
    fn jet(&self, t: f64) -> (Point2, Point2, Point2) {
        let [_, c1, c2, c3] = self.c;
        (
            self.eval(t),
            c1 + (c2 * 2.0 + c3 * (3.0 * t)) * t,
            c2 * 2.0 + c3 * (6.0 * t),
        )
    }
}

/// Newton polish of the squared distance starting at `t0`, clamped to [0, 1].
fn polish(seg: &CubicSegment, poly: &Power, q: Point2, t0: f64) -> Nearest {
    let mut t = t0.clamp(0.0, 1.0);
    let mut g = f64::INFINITY;
    for _ in 0..24 {
        let (p, d1, d2) = poly.jet(t);
        let r = p - q;
        if g == f64::INFINITY {
            g = r.dot(r);
        }
        let grad = r.dot(d1);
        let hess = d1.dot(d1) + r.dot(d2);
        let mut step = if hess > 0.0 {
            -grad / hess
        } else {
            // concave here: move downhill by a bounded amount
            -grad.signum() * 1e-2
        };
        if step == 0.0 || !step.is_finite() {
            break;
        }
        if hess > 0.0 && step.abs() < 0.05 {
            // inside the quadratic-convergence basin: take the full step
            // and stop once it is small enough that the next would vanish
            let tn = (t + step).clamp(0.0, 1.0);
            let done = (tn - t).abs() < 1e-8;
            t = tn;
            if done {
                break;
            }
            g = f64::INFINITY;
            continue;
        }
        // damp until the squared distance does not increase
        let mut accepted = None;
        for _ in 0..16 {
            let tn = (t + step).clamp(0.0, 1.0);
            let pn = poly.eval(tn);
            let gn = (pn - q).dot(pn - q);
            if gn <= g {
                accepted = Some((tn, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((tn, gn)) = accepted else {
            break;
        };
        let moved = (tn - t).abs();
        t = tn;
        g = gn;
        if moved < 1e-12 {
            break;
        }
    }
    // endpoints are exact; interior points come from the Bernstein form
    let point = if t == 0.0 {
        seg.p0
    } else if t == 1.0 {
        seg.p3
    } else {
        seg.eval(t)
    };
    Nearest {
        t,
        point,
        distance: point.distance(q),
    }
}

/// Uniform-parameter polyline over a segment with a flattening error bound.
#[derive(Clone, Debug)]
pub struct Flattened {
    pub vertices: Vec<Point2>,
    chords: Chords,
    power: Power,
    /// Max distance between the curve and its polyline.
    pub error: f64,
}

/// Most chords a segment is flattened into.
const MAX_PIECES: usize = 64;

impl Flattened {
    pub fn new(seg: &CubicSegment, target_error: f64) -> Self {
        let m2 = seg.second_derivative_bound();
        // chord error on a parameter step h is at most h^2/8 * max|B''|
        let pieces = ((m2 / (8.0 * target_error)).sqrt().ceil() as usize).clamp(4, MAX_PIECES);
        let h = 1.0 / pieces as f64;
        let vertices = seg.flatten(pieces);
        Self {
            chords: Chords::new(&vertices),
            vertices,
            power: Power::new(seg),
            error: m2 * h * h / 8.0,
        }
    }

    pub fn pieces(&self) -> usize {
        self.vertices.len() - 1
    }

    /// Distance from `q` to the polyline and the curve parameter of the
    /// closest polyline point.
    pub fn distance(&self, q: Point2) -> (f64, f64) {
        let mut e = [0.0; MAX_PIECES];
        let e = self.chords.distances_sq(q, &mut e);
        let (j, best) = e
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (j, &v)| if v < b.1 { (j, v) } else { b });
        (best.sqrt(), self.chords.seed(j, q, self.pieces()))
    }
}

/// Chord data laid out per component so the distance loop vectorizes.
#[derive(Clone, Debug)]
struct Chords {
    ax: Vec<f64>,
    ay: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    inv_len2: Vec<f64>,
}

impl Chords {
    fn new(vertices: &[Point2]) -> Self {
        let n = vertices.len() - 1;
        let mut c = Chords {
            ax: Vec::with_capacity(n),
            ay: Vec::with_capacity(n),
            dx: Vec::with_capacity(n),
            dy: Vec::with_capacity(n),
            inv_len2: Vec::with_capacity(n),
        };
        for w in vertices.windows(2) {
            let d = w[1] - w[0];
            let len2 = d.dot(d);
            c.ax.push(w[0].x);
            c.ay.push(w[0].y);
            c.dx.push(d.x);
            c.dy.push(d.y);
            c.inv_len2.push(if len2 > 0.0 { 1.0 / len2 } else { 0.0 });
        }
        c
    }

    /// Squared distances from `q` to every chord, written into `out`.
    #[inline]
    fn distances_sq<'a>(&self, q: Point2, out: &'a mut [f64; MAX_PIECES]) -> &'a [f64] {
        let n = self.ax.len();
        let out = &mut out[..n];
        let (ax, ay, dx, dy, inv) = (
            &self.ax[..n],
            &self.ay[..n],
            &self.dx[..n],
            &self.dy[..n],
            &self.inv_len2[..n],
        );
        for j in 0..n {
            let (rx, ry) = (q.x - ax[j], q.y - ay[j]);
            let u = ((rx * dx[j] + ry * dy[j]) * inv[j]).clamp(0.0, 1.0);
            let (ex, ey) = (rx - dx[j] * u, ry - dy[j] * u);
            out[j] = ex * ex + ey * ey;
        }
        out
    }

    /// Curve parameter of the foot of `q` on chord `j`.
    fn seed(&self, j: usize, q: Point2, pieces: usize) -> f64 {
        let (rx, ry) = (q.x - self.ax[j], q.y - self.ay[j]);
        let u = ((rx * self.dx[j] + ry * self.dy[j]) * self.inv_len2[j]).clamp(0.0, 1.0);
        (j as f64 + u) / pieces as f64
    }
}

/// Global closest point on `seg` to `q`.
///
/// Seeds come from every local minimum of the chord distances that could
/// still beat the best one given the flattening error; each seed is
/// Newton-polished and the best result wins.
pub fn nearest_on_segment(seg: &CubicSegment, flat: &Flattened, q: Point2) -> Nearest {
    nearest_within(seg, flat, q, f64::INFINITY).expect("an unbounded search always finds a point")
}

/// Like [`nearest_on_segment`], but gives up with `None` as soon as the
/// polyline bound proves the segment cannot come closer than `cutoff`.
pub fn nearest_within(seg: &CubicSegment, flat: &Flattened, q: Point2, cutoff: f64) -> Option<Nearest> {
    let mut buf = [0.0; MAX_PIECES];
    let e = flat.chords.distances_sq(q, &mut buf);
    let best_sq = e.iter().copied().fold(f64::INFINITY, f64::min);
    let best_chord = best_sq.sqrt();
    if best_chord - flat.error >= cutoff {
        return None;
    }
    let limit = best_chord + 2.0 * flat.error;
    let limit_sq = limit * limit;
    let mut best = Nearest {
        t: 0.0,
        point: seg.p0,
        distance: seg.p0.distance(q),
    };
    let end = Nearest {
        t: 1.0,
        point: seg.p3,
        distance: seg.p3.distance(q),
    };
    if end.distance < best.distance {
        best = end;
    }
    let n = e.len();
    for j in 0..n {
        let d = e[j];
        if d > limit_sq {
            continue;
        }
        let left = j == 0 || e[j - 1] >= d;
        let right = j + 1 == n || e[j + 1] > d;
        if !(left && right) {
            continue;
        }
        let cand = polish(seg, &flat.power, q, flat.chords.seed(j, q, n));
        if cand.distance < best.distance {
            best = cand;
        }
    }
    Some(best)
}

/// A crossing of a horizontal line with the outline: x position and the
/// winding contribution (+1 when the curve moves toward +y).
#[derive(Clone, Copy, Debug)]
pub struct Crossing {
    pub x: f64,
    pub dir: i32,
}

/// Appends the crossings of `seg` with the line `y = yc`.
///
/// The segment is split into y-monotone pieces; each piece counts when
/// `min_y <= yc < max_y`, which makes shared piece ends count once.
pub fn push_crossings(seg: &CubicSegment, yc: f64, out: &mut Vec<Crossing>) {
    let ys = [seg.p0.y, seg.p1.y, seg.p2.y, seg.p3.y];
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if yc < lo || yc >= hi {
        return;
    }
    // y'(t)/3 = a t^2 + b t + c
    let d0 = seg.p1.y - seg.p0.y;
    let d1 = seg.p2.y - seg.p1.y;
    let d2 = seg.p3.y - seg.p2.y;
    let a = d0 - 2.0 * d1 + d2;
    let b = 2.0 * (d1 - d0);
    let c = d0;
    let mut cuts = [0.0; 4];
    let mut nc = 0;
    cuts[nc] = 0.0;
    nc += 1;
    let mut roots = [f64::NAN; 2];
    if a.abs() < 1e-12 * (b.abs() + c.abs()).max(1e-300) {
        if b != 0.0 {
            roots[0] = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc > 0.0 {
            let s = disc.sqrt();
            let qq = -0.5 * (b + b.signum_nonzero() * s);
            roots[0] = qq / a;
            roots[1] = if qq != 0.0 { c / qq } else { f64::NAN };
        }
    }
    if roots[0] > roots[1] {
        roots.swap(0, 1);
    }
    for r in roots {
        if r > 0.0 && r < 1.0 {
            cuts[nc] = r;
            nc += 1;
        }
    }
    cuts[nc] = 1.0;
    nc += 1;
    for k in 0..nc - 1 {
        let (ta, tb) = (cuts[k], cuts[k + 1]);
        if tb <= ta {
            continue;
        }
        let ya = if ta == 0.0 { seg.p0.y } else { seg.eval(ta).y };
        let yb = if tb == 1.0 { seg.p3.y } else { seg.eval(tb).y };
        let (pmin, pmax) = if ya < yb { (ya, yb) } else { (yb, ya) };
        if !(yc >= pmin && yc < pmax) {
            continue;
        }
        let increasing = yb > ya;
        // bisection on the monotone piece
        let (mut l, mut r) = (ta, tb);
        for _ in 0..64 {
            let m = 0.5 * (l + r);
            if m <= l || m >= r {
                break;
            }
            let ym = seg.eval(m).y;
            if (ym < yc) == increasing {
                l = m;
            } else {
                r = m;
            }
        }
        let t = 0.5 * (l + r);
        out.push(Crossing {
            x: seg.eval(t).x,
            dir: if increasing { 1 } else { -1 },
        });
    }
}

trait SignumNonzero {
    fn signum_nonzero(self) -> f64;
}

impl SignumNonzero for f64 {
    fn signum_nonzero(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Winding number at x on a row, given that row's crossings (ray toward +x).
pub fn winding_at(crossings: &[Crossing], x: f64) -> i32 {
    crossings.iter().filter(|c| c.x > x).map(|c| c.dir).sum()
}
