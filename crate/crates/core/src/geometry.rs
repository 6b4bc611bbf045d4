//! Discrete-geometry kernels shared by detection and separation.

use thiserror::Error;

use crate::raster::{BBox, LocalMask, Point, Region, MOORE_CW};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ellipse fit needs at least one point")]
    NoPoints,
    #[error("ellipse tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

// ---------------------------------------------------------------------------
// Boundary tracing
// ---------------------------------------------------------------------------

/// Closed walk along a region's outer contour, clockwise on screen.
///
/// Points may repeat: a one-pixel-wide protrusion is walked out and back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    pub points: Vec<Point>,
}

impl Boundary {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Point at a cyclic index.
    pub fn at(&self, i: isize) -> Point {
        let n = self.points.len() as isize;
        self.points[i.rem_euclid(n) as usize]
    }

    /// Twice the signed shoelace area with the row axis flipped to point up,
    /// so the usual sign convention applies: clockwise walks are negative.
    pub fn signed_area2(&self) -> i64 {
        let n = self.points.len();
        let mut acc = 0i64;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            acc += a.x as i64 * (-b.y as i64) - b.x as i64 * (-a.y as i64);
        }
        acc
    }
}

fn dir_index(dx: i32, dy: i32) -> usize {
    MOORE_CW.iter().position(|&d| d == (dx, dy)).expect("unit offset")
}

/// Moore-neighbor tracing of the outer contour.
///
/// Starts at the topmost-then-leftmost pixel with the backtrack cell to its
/// west and walks clockwise. The walk ends when it is back at the start pixel
/// and about to repeat its very first move, which is Jacob's criterion
/// stated on transitions; it closes one-pixel-wide regions correctly.
pub fn trace_boundary(region: &Region) -> Boundary {
    let mask = region.mask();
    let start = region.pixels()[0];

    // next foreground cell scanning clockwise after the backtrack direction
    let step = |p: Point, back: usize| -> Option<(Point, usize)> {
        for k in 1..=8 {
            let d = (back + k) % 8;
            let (dx, dy) = MOORE_CW[d];
            let c = Point::new(p.x + dx, p.y + dy);
            if mask.get(c) {
                let (px, py) = MOORE_CW[(back + k - 1) % 8];
                let prev = Point::new(p.x + px, p.y + py);
                return Some((c, dir_index(prev.x - c.x, prev.y - c.y)));
            }
        }
        None
    };

    let Some(first) = step(start, 0) else {
        return Boundary { points: vec![start] };
    };
    let mut points = vec![start];
    let (mut p, mut back) = first;
    let limit = 8 * region.len() + 16;
    while points.len() <= limit {
        if p == start {
            match step(p, back) {
                Some(next) if next == first => break,
                _ => {}
            }
        }
        points.push(p);
        let (np, nb) = step(p, back).expect("connected pixel has a neighbor");
        p = np;
        back = nb;
    }
    Boundary { points }
}

// ---------------------------------------------------------------------------
// Convex hull
// ---------------------------------------------------------------------------

/// Convex hull with strictly convex vertices in positive orientation
/// (every consecutive triple has a positive cross product in raw pixel
/// coordinates, which is clockwise on screen since rows grow downward).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hull {
    pub vertices: Vec<Point>,
}

#[inline]
pub(crate) fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.x - o.x) as i64 * (b.y - o.y) as i64 - (a.y - o.y) as i64 * (b.x - o.x) as i64
}

impl Hull {
    /// Inside-or-on test in exact integer arithmetic.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => v[0] == p,
            2 => {
                cross(v[0], v[1], p) == 0
                    && p.x >= v[0].x.min(v[1].x)
                    && p.x <= v[0].x.max(v[1].x)
                    && p.y >= v[0].y.min(v[1].y)
                    && p.y <= v[0].y.max(v[1].y)
            }
            n => (0..n).all(|i| cross(v[i], v[(i + 1) % n], p) >= 0),
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        BBox::of(&self.vertices)
    }
}

/// Andrew's monotone chain. Collinear input yields its two extreme points.
pub fn convex_hull(points: &[Point]) -> Hull {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return Hull { vertices: pts };
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && lower[0] == lower[1] {
        lower.pop();
    }
    Hull { vertices: lower }
}

/// Lattice points inside or on the hull, scanning `bbox`.
pub fn hull_pixel_count(hull: &Hull, bbox: BBox) -> usize {
    let mut count = 0;
    for y in bbox.min_y..=bbox.max_y {
        for x in bbox.min_x..=bbox.max_x {
            if hull.contains(Point::new(x, y)) {
                count += 1;
            }
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Minimum-area enclosing ellipse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseFit {
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from the +x axis, radians.
    pub orientation: f64,
    pub axis_ratio: f64,
}

impl EllipseFit {
    /// Squared normalized radius of `(x, y)`; `<= 1` means inside.
    pub fn level(&self, x: f64, y: f64) -> f64 {
        self.level_scaled(x, y, 1.0, 1.0)
    }

    /// Like [`level`](Self::level) with the semi-axes multiplied by the
    /// given factors.
    pub fn level_scaled(&self, x: f64, y: f64, major_scale: f64, minor_scale: f64) -> f64 {
        let (c, s) = (self.orientation.cos(), self.orientation.sin());
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let a = self.semi_major * major_scale;
        let b = self.semi_minor * minor_scale;
        (u / a).powi(2) + (v / b).powi(2)
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_major * self.semi_minor
    }
}

/// Points the ellipse is actually fitted to: hull vertices, or the pixel
/// corners of the hull vertices when the hull is a point or a segment.
pub fn ellipse_support(points: &[Point]) -> Vec<(f64, f64)> {
    let hull = convex_hull(points);
    let v: Vec<(f64, f64)> = hull.vertices.iter().map(|p| (p.x as f64, p.y as f64)).collect();
    if v.len() >= 3 {
        return v;
    }
    let mut out = Vec::with_capacity(v.len() * 4);
    for (x, y) in v {
        for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
            out.push((x + dx, y + dy));
        }
    }
    out
}

/// Minimum-area ellipse enclosing a set of pixel centers.
pub fn min_enclosing_ellipse(points: &[Point], tol: f64) -> Result<EllipseFit, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::NoPoints);
    }
    if !(tol > 0.0) {
        return Err(GeometryError::BadTolerance(tol));
    }
    Ok(mvee(&ellipse_support(points), tol))
}

fn inv3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut r = [[0.0; 3]; 3];
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    r
}

/// Khachiyan's algorithm with Todd-Yildirim away steps, on a full-rank 2-D
/// point set. Iterates until every lifted leverage is within `tol` (relative)
/// of the optimum value 3, then scales the ellipse so the farthest point lies
/// exactly on it.
fn mvee(pts: &[(f64, f64)], tol: f64) -> EllipseFit {
    const LIFTED: f64 = 3.0;
    let n = pts.len();
    // centering improves conditioning of the lifted moment matrix
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let q: Vec<[f64; 3]> = pts.iter().map(|p| [p.0 - mx, p.1 - my, 1.0]).collect();
    let mut u = vec![1.0 / n as f64; n];
    let mut lev = vec![0.0; n];
    let max_iter = 100_000;
    for _ in 0..max_iter {
        let mut x = [[0.0; 3]; 3];
        for (qj, &uj) in q.iter().zip(&u) {
            for r in 0..3 {
                for c in 0..3 {
                    x[r][c] += uj * qj[r] * qj[c];
                }
            }
        }
        let xi = inv3(&x);
        for (j, qj) in q.iter().enumerate() {
            let mut s = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    s += qj[r] * xi[r][c] * qj[c];
                }
            }
            lev[j] = s;
        }
        let (jmax, &mmax) = lev
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let (jmin, &mmin) = lev
            .iter()
            .enumerate()
            .filter(|(j, _)| u[*j] > 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("some weight is positive");
        let eps_plus = mmax / LIFTED - 1.0;
        let eps_minus = 1.0 - mmin / LIFTED;
        if eps_plus.max(eps_minus) <= tol {
            break;
        }
        if eps_plus > eps_minus {
            let tau = (mmax - LIFTED) / (LIFTED * (mmax - 1.0));
            for w in u.iter_mut() {
                *w *= 1.0 - tau;
            }
            u[jmax] += tau;
        } else {
            let uj = u[jmin];
            let mut tau = (mmin - LIFTED) / (LIFTED * (mmin - 1.0));
            tau = tau.max(-uj / (1.0 - uj));
            for w in u.iter_mut() {
                *w *= 1.0 - tau;
            }
            u[jmin] += tau;
            if u[jmin] < 1e-300 {
                u[jmin] = 0.0;
            }
        }
    }

    let cx: f64 = q.iter().zip(&u).map(|(p, w)| w * p[0]).sum();
    let cy: f64 = q.iter().zip(&u).map(|(p, w)| w * p[1]).sum();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, w) in q.iter().zip(&u) {
        let dx = p[0] - cx;
        let dy = p[1] - cy;
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    // shape matrix A = S^-1 / 2
    let det = sxx * syy - sxy * sxy;
    let (mut a, mut b, mut d) = (syy / det / 2.0, -sxy / det / 2.0, sxx / det / 2.0);
    let scale = q
        .iter()
        .map(|p| {
            let dx = p[0] - cx;
            let dy = p[1] - cy;
            a * dx * dx + 2.0 * b * dx * dy + d * dy * dy
        })
        .fold(0.0f64, f64::max);
    a /= scale;
    b /= scale;
    d /= scale;

    // eigen-decomposition of [[a, b], [b, d]]
    let mean = (a + d) / 2.0;
    let diff = ((a - d) / 2.0).hypot(b);
    let small = mean - diff;
    let large = mean + diff;
    let semi_major = 1.0 / small.sqrt();
    let semi_minor = 1.0 / large.sqrt();
    // eigenvector for the small eigenvalue points along the major axis
    let orientation = if b.abs() > 1e-300 {
        (small - a).atan2(b)
    } else if a <= d {
        0.0
    } else {
        std::f64::consts::FRAC_PI_2
    };
    EllipseFit {
        center: (cx + mx, cy + my),
        semi_major,
        semi_minor,
        orientation,
        axis_ratio: semi_minor / semi_major,
    }
}

// ---------------------------------------------------------------------------
// Skeleton
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonInfo {
    pub skeleton_pixels: Vec<Point>,
    pub endpoints: Vec<Point>,
}

/// Neighborhood in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
const ZS_ORDER: [(i32, i32); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn zs_neighbors(mask: &LocalMask, p: Point) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, &(dx, dy)) in ZS_ORDER.iter().enumerate() {
        n[k] = mask.get(Point::new(p.x + dx, p.y + dy));
    }
    n
}

fn transitions(n: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count()
}

/// The Zhang-Suen deletion test for one sub-iteration.
pub(crate) fn zs_deletable(n: &[bool; 8], first_pass: bool) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) || transitions(n) != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *n;
    if first_pass {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang-Suen thinning.
///
/// Candidates for each sub-iteration are chosen in parallel from the state
/// at the start of the sub-iteration, as in the original scheme, but are
/// then removed one at a time and only while they remain simple
/// (`A == 1`, `2 <= B <= 6` against the current state). That keeps two-pixel
/// squares and two-pixel-thick diagonals from vanishing, so the skeleton
/// always has the region's component count.
pub fn skeletonize(region: &Region) -> SkeletonInfo {
    let mut mask = region.mask();
    let mut live: Vec<Point> = region.pixels().to_vec();
    loop {
        let mut changed = false;
        for first_pass in [true, false] {
            let candidates: Vec<Point> = live
                .iter()
                .copied()
                .filter(|&p| zs_deletable(&zs_neighbors(&mask, p), first_pass))
                .collect();
            for p in candidates {
                let n = zs_neighbors(&mask, p);
                let b = n.iter().filter(|&&v| v).count();
                if transitions(&n) == 1 && (2..=6).contains(&b) {
                    mask.set(p, false);
                    changed = true;
                }
            }
            live.retain(|&p| mask.get(p));
        }
        if !changed {
            break;
        }
    }
    let endpoints = live.iter().copied().filter(|&p| is_endpoint(&mask, p)).collect();
    SkeletonInfo {
        skeleton_pixels: live,
        endpoints,
    }
}

/// A skeleton pixel terminates a line when its skeleton neighbors form a
/// single run of at most two cells around it: one neighbor, or two neighbors
/// that touch each other (the staircase tip thinning leaves behind). An
/// isolated pixel also counts.
fn is_endpoint(mask: &LocalMask, p: Point) -> bool {
    let n = zs_neighbors(mask, p);
    match n.iter().filter(|&&v| v).count() {
        0 | 1 => true,
        2 => (0..8).any(|k| n[k] && n[(k + 1) % 8]),
        _ => false,
    }
}

pub fn count_endpoints(info: &SkeletonInfo) -> usize {
    info.endpoints.len()
}
