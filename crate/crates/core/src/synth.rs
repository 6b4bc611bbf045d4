//! Seeded synthetic chromosomes, clusters and scenes with ground truth, and
//! the IoU-based evaluation of a separation run against that truth.
//!
//! A chromosome is a thick curve: a circular-arc spine swept by a disk whose
//! radius follows a half-width profile plus a small smooth seeded jitter.
//! Cluster kinds mirror the configurations the separator is meant to handle:
//!
//! * `touch`: one chromosome's tip rests against the side of another.
//! * `partial_overlap`: the tip sinks into the other chromosome's body.
//! * `end_touch`: a short chromosome touches a long one near its end.
//! * `cross`: a chromosome runs across another close to its own tip,
//!   leaving a short overhang on the far side.
//! * `chain(k)`: k chromosomes, each touching the side of the previous one.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutline::SeparationForest;
use crate::geometry::trace_boundary;
use crate::raster::{
    components, extract_regions, label_components, BinaryImage, Connectivity, LabelMap, LocalMask, Point, Region,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid chromosome spec: {0}")]
    InvalidSpec(String),
    #[error("spine self-intersects at this width")]
    SelfIntersecting,
    #[error("could not place {0} after bounded retries")]
    PlacementFailed(String),
    #[error("canvas {width}x{height} too small for the requested scene")]
    CanvasTooSmall { width: usize, height: usize },
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// A chromosome as a thick circular-arc curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromosomeSpec {
    /// First spine point.
    pub origin: (f64, f64),
    /// Initial direction of the spine, radians.
    pub heading: f64,
    pub length: f64,
    /// Half-width samples spread evenly along the arclength.
    pub width_profile: Vec<f64>,
    /// Total turning of the spine, radians.
    pub bend_angle: f64,
    /// Amplitude of the seeded half-width jitter, pixels.
    pub roughness: f64,
}

impl ChromosomeSpec {
    pub fn straight(origin: (f64, f64), heading: f64, length: f64, half_width: f64) -> Self {
        Self {
            origin,
            heading,
            length,
            width_profile: vec![half_width],
            bend_angle: 0.0,
            roughness: 0.0,
        }
    }

    pub fn with_bend(mut self, bend_angle: f64) -> Self {
        self.bend_angle = bend_angle;
        self
    }

    pub fn with_roughness(mut self, roughness: f64) -> Self {
        self.roughness = roughness;
        self
    }

    pub fn max_half_width(&self) -> f64 {
        self.width_profile.iter().copied().fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if !(self.length >= 8.0) {
            return Err(SynthError::InvalidSpec(format!("length {} < 8", self.length)));
        }
        if self.width_profile.is_empty() || self.width_profile.iter().any(|&w| !(w >= 1.0)) {
            return Err(SynthError::InvalidSpec("half-widths must be >= 1".into()));
        }
        if !(self.roughness >= 0.0) || self.roughness >= 1.0 {
            return Err(SynthError::InvalidSpec("roughness must lie in [0, 1)".into()));
        }
        if self.bend_angle.abs() >= 2.0 * PI {
            return Err(SynthError::SelfIntersecting);
        }
        let w = self.max_half_width() + self.roughness;
        if self.bend_angle != 0.0 && self.length / self.bend_angle.abs() <= w {
            return Err(SynthError::SelfIntersecting);
        }
        // thick ends must not curl round into each other
        let spine = self.spine();
        let step = self.length / (spine.len() - 1) as f64;
        let gap = ((2.0 * w + 2.0) / step).ceil() as usize;
        for i in 0..spine.len() {
            for j in i + gap.max(1) * 2..spine.len() {
                let d = (spine[i].0 - spine[j].0).hypot(spine[i].1 - spine[j].1);
                if d <= 2.0 * w + 1.5 && (j - i) as f64 * step > PI * w {
                    return Err(SynthError::SelfIntersecting);
                }
            }
        }
        Ok(())
    }

    /// Spine polyline sampled every half pixel or finer.
    pub fn spine(&self) -> Vec<(f64, f64)> {
        let steps = (self.length * 2.0).ceil().max(2.0) as usize;
        let ds = self.length / steps as f64;
        let mut out = Vec::with_capacity(steps + 1);
        let (mut x, mut y) = self.origin;
        out.push((x, y));
        for k in 0..steps {
            let mid = (k as f64 + 0.5) / steps as f64;
            let h = self.heading + self.bend_angle * mid;
            x += ds * h.cos();
            y += ds * h.sin();
            out.push((x, y));
        }
        out
    }

    /// Spine point and unit direction at arclength fraction `t`.
    pub fn frame_at(&self, t: f64) -> ((f64, f64), (f64, f64)) {
        let spine = self.spine();
        let pos = t.clamp(0.0, 1.0) * (spine.len() - 1) as f64;
        let i = (pos.floor() as usize).min(spine.len() - 2);
        let f = pos - i as f64;
        let (a, b) = (spine[i], spine[i + 1]);
        let h = self.heading + self.bend_angle * t;
        ((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)), (h.cos(), h.sin()))
    }

    pub fn end_point(&self) -> (f64, f64) {
        *self.spine().last().expect("spine has points")
    }

    fn half_width_at(&self, t: f64) -> f64 {
        let w = &self.width_profile;
        if w.len() == 1 {
            return w[0];
        }
        let pos = t.clamp(0.0, 1.0) * (w.len() - 1) as f64;
        let i = (pos.floor() as usize).min(w.len() - 2);
        let f = pos - i as f64;
        w[i] * (1.0 - f) + w[i + 1] * f
    }
}

/// Smooth seeded jitter: random knots every 4 px, linearly interpolated.
fn jitter_profile(seed: u64, length: f64, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let knots = (length / 4.0).ceil() as usize + 2;
    (0..knots)
        .map(|_| {
            if amplitude > 0.0 {
                rng.gen_range(-amplitude..=amplitude)
            } else {
                0.0
            }
        })
        .collect()
}

/// Rasterizes a chromosome: every pixel center within the local half-width
/// of the spine. Same seed and spec give the same pixels.
pub fn gen_chromosome(seed: u64, spec: &ChromosomeSpec) -> Result<Region> {
    spec.validate()?;
    let spine = spec.spine();
    let jitter = jitter_profile(seed, spec.length, spec.roughness);
    let seg_count = spine.len() - 1;
    let w_max = spec.max_half_width() + spec.roughness;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &spine {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bx0 = (x0 - w_max).floor() as i32 - 1;
    let by0 = (y0 - w_max).floor() as i32 - 1;
    let bx1 = (x1 + w_max).ceil() as i32 + 1;
    let by1 = (y1 + w_max).ceil() as i32 + 1;
    let mut pixels = Vec::new();
    for py in by0..=by1 {
        for px in bx0..=bx1 {
            let (fx, fy) = (px as f64, py as f64);
            let mut inside = false;
            for k in 0..seg_count {
                let (a, b) = (spine[k], spine[k + 1]);
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let len2 = vx * vx + vy * vy;
                let s = (((fx - a.0) * vx + (fy - a.1) * vy) / len2).clamp(0.0, 1.0);
                let d = (fx - a.0 - s * vx).hypot(fy - a.1 - s * vy);
                if d > w_max {
                    continue;
                }
                let t = (k as f64 + s) / seg_count as f64;
                let jpos = t * spec.length / 4.0;
                let ji = (jpos.floor() as usize).min(jitter.len() - 2);
                let jf = jpos - ji as f64;
                let j = jitter[ji] * (1.0 - jf) + jitter[ji + 1] * jf;
                if d <= spec.half_width_at(t) + j {
                    inside = true;
                    break;
                }
            }
            if inside {
                pixels.push(Point::new(px, py));
            }
        }
    }
    Region::from_pixels(1, pixels).map_err(|_| SynthError::SelfIntersecting)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum ClusterKind {
    Touch,
    PartialOverlap,
    EndTouch,
    Chain(usize),
    Cross,
}

impl ClusterKind {
    pub fn name(&self) -> String {
        match self {
            ClusterKind::Touch => "touch".into(),
            ClusterKind::PartialOverlap => "partial_overlap".into(),
            ClusterKind::EndTouch => "end_touch".into(),
            ClusterKind::Chain(k) => format!("chain({k})"),
            ClusterKind::Cross => "cross".into(),
        }
    }
}

impl std::str::FromStr for ClusterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "touch" => Ok(ClusterKind::Touch),
            "partial_overlap" | "overlap" => Ok(ClusterKind::PartialOverlap),
            "end_touch" => Ok(ClusterKind::EndTouch),
            "cross" => Ok(ClusterKind::Cross),
            _ => {
                let k = s
                    .strip_prefix("chain(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("chain"))
                    .and_then(|k| k.trim_start_matches(['_', ':']).parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown cluster kind '{s}'"))?;
                Ok(ClusterKind::Chain(k))
            }
        }
    }
}

/// A set of pixels, one per chromosome, plus how they group into clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub masks: Vec<Vec<Point>>,
    /// Index sets into `masks` of touching/overlapping groups.
    pub clusters: Vec<FragmentCluster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentCluster {
    pub kind: ClusterKind,
    pub members: Vec<usize>,
    /// Per touching pair, the two boundary concavity points at the junction.
    pub notch_points: Vec<[Point; 2]>,
}

impl Fragment {
    pub fn pixels(&self) -> Vec<Point> {
        let mut all: Vec<Point> = self.masks.iter().flatten().copied().collect();
        all.sort_by_key(|p| (p.y, p.x));
        all.dedup();
        all
    }

    fn translate(&mut self, dx: i32, dy: i32) {
        let shift = |p: &mut Point| {
            p.x += dx;
            p.y += dy;
        };
        self.masks.iter_mut().flatten().for_each(shift);
        for c in &mut self.clusters {
            c.notch_points.iter_mut().flatten().for_each(shift);
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

const ROUGHNESS: f64 = 0.3;

/// A random single chromosome anchored at the origin.
pub fn random_single_spec(rng: &mut ChaCha8Rng) -> ChromosomeSpec {
    let heading = uniform(rng, -PI, PI);
    let roll: f64 = rng.gen();
    let (length, half_width, bend) = if roll < 0.15 {
        // small, rounder chromosomes
        (
            uniform(rng, 12.0, 20.0),
            uniform(rng, 2.8, 3.6),
            uniform(rng, -0.3, 0.3),
        )
    } else if roll < 0.35 {
        let b = uniform(rng, 0.8, 1.6);
        (
            uniform(rng, 32.0, 58.0),
            uniform(rng, 2.5, 3.5),
            if rng.gen() { b } else { -b },
        )
    } else {
        (
            uniform(rng, 26.0, 62.0),
            uniform(rng, 2.5, 3.8),
            uniform(rng, -0.4, 0.4),
        )
    };
    ChromosomeSpec::straight((0.0, 0.0), heading, length, half_width)
        .with_bend(bend)
        .with_roughness(ROUGHNESS)
}

fn long_spec(rng: &mut ChaCha8Rng, length: (f64, f64), half_width: (f64, f64)) -> ChromosomeSpec {
    ChromosomeSpec::straight(
        (0.0, 0.0),
        uniform(rng, -PI, PI),
        uniform(rng, length.0, length.1),
        uniform(rng, half_width.0, half_width.1),
    )
    .with_bend(uniform(rng, -0.25, 0.25))
    .with_roughness(ROUGHNESS)
}

/// Places `child` so its start tip meets the side of `base` at arclength
/// fraction `t`, on side `side` (+1 left of travel, -1 right), leaning by
/// `lean` from the side normal. `depth` is how far the tip sinks past the
/// base surface, in pixels.
fn attach(
    base: &ChromosomeSpec,
    mut child: ChromosomeSpec,
    t: f64,
    side: f64,
    lean: f64,
    depth: f64,
) -> ChromosomeSpec {
    let ((bx, by), (dx, dy)) = base.frame_at(t);
    let (nx, ny) = (-dy * side, dx * side);
    let heading = ny.atan2(nx) + lean;
    let (ux, uy) = (heading.cos(), heading.sin());
    let hw_base = base.half_width_at(t);
    let hw_child = child.width_profile[0];
    // tip of the child cap sits `depth` inside the base surface along the normal
    let along = (hw_base - depth + hw_child) / (ux * nx + uy * ny).max(0.3);
    child.origin = (bx + ux * along, by + uy * along);
    child.heading = heading;
    child
}

fn min_distance(a: &[Point], b: &[Point]) -> f64 {
    let set: HashSet<Point> = b.iter().copied().collect();
    let mut best = f64::MAX;
    let bb = crate::raster::BBox::of(b).expect("non-empty");
    for p in a {
        if p.x < bb.min_x - 6 || p.x > bb.max_x + 6 || p.y < bb.min_y - 6 || p.y > bb.max_y + 6 {
            continue;
        }
        for dy in -5..=5 {
            for dx in -5..=5 {
                if set.contains(&Point::new(p.x + dx, p.y + dy)) {
                    best = best.min(((dx * dx + dy * dy) as f64).sqrt());
                }
            }
        }
    }
    best
}

/// The two boundary pixels of the merged cluster at the junction of
/// `base` and `child`, one on each side of the child's axis.
fn junction_notches(
    merged: &[Point],
    base: &[Point],
    child: &[Point],
    tip: (f64, f64),
    axis: (f64, f64),
) -> Option<[Point; 2]> {
    let region = Region::from_pixels(1, merged.to_vec()).ok()?;
    let boundary = trace_boundary(&region);
    let base_mask = LocalMask::from_points(base, 2);
    let child_set: HashSet<Point> = child.iter().copied().collect();
    let base_only: Vec<Point> = base.iter().copied().filter(|p| !child_set.contains(p)).collect();
    let child_only: Vec<Point> = child.iter().copied().filter(|p| !base_mask.get(*p)).collect();
    let base_only = LocalMask::from_points(&base_only, 2);
    let child_only = LocalMask::from_points(&child_only, 2);
    let near = |m: &LocalMask, p: Point| (-1..=1).any(|dy| (-1..=1).any(|dx| m.get(Point::new(p.x + dx, p.y + dy))));
    let mut best: [Option<(f64, Point)>; 2] = [None, None];
    for &p in &boundary.points {
        if !(near(&base_only, p) && near(&child_only, p)) {
            continue;
        }
        let (rx, ry) = (p.x as f64 - tip.0, p.y as f64 - tip.1);
        let side = if axis.0 * ry - axis.1 * rx >= 0.0 { 0 } else { 1 };
        let d = rx.hypot(ry);
        if best[side].is_none_or(|(bd, _)| d < bd) {
            best[side] = Some((d, p));
        }
    }
    Some([best[0]?.1, best[1]?.1])
}

/// Generates one cluster fragment in local coordinates.
pub fn gen_cluster(seed: u64, kind: ClusterKind) -> Result<Fragment> {
    if let ClusterKind::Chain(k) = kind {
        if k < 2 {
            return Err(SynthError::InvalidSpec(format!("chain needs k >= 2, got {k}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..50 {
        if let Some(f) = try_cluster(&mut rng, kind)? {
            return Ok(f);
        }
    }
    Err(SynthError::PlacementFailed(kind.name()))
}

fn try_cluster(rng: &mut ChaCha8Rng, kind: ClusterKind) -> Result<Option<Fragment>> {
    let side = if rng.gen() { 1.0 } else { -1.0 };
    let lean = uniform(rng, -0.45, 0.45);
    let mut specs: Vec<ChromosomeSpec> = Vec::new();
    // (base index, child index) per junction
    let mut joints: Vec<(usize, usize)> = Vec::new();
    let mut overlapping = false;
    match kind {
        ClusterKind::Touch | ClusterKind::PartialOverlap => {
            let base = long_spec(rng, (42.0, 62.0), (2.8, 3.6));
            let child = long_spec(rng, (30.0, 52.0), (2.6, 3.4)).with_bend(uniform(rng, -0.2, 0.2));
            let t = uniform(rng, 0.35, 0.65);
            let depth = if kind == ClusterKind::Touch {
                0.8
            } else {
                overlapping = true;
                base.width_profile[0] * uniform(rng, 0.7, 1.2)
            };
            let child = attach(&base, child, t, side, lean, depth);
            specs.extend([base, child]);
            joints.push((0, 1));
        }
        ClusterKind::EndTouch => {
            let base = long_spec(rng, (50.0, 64.0), (2.8, 3.6));
            let small = long_spec(rng, (14.0, 20.0), (2.8, 3.4)).with_bend(0.0);
            let t = uniform(rng, 0.82, 0.9);
            let small = attach(&base, small, t, side, lean, 0.8);
            specs.extend([base, small]);
            joints.push((0, 1));
        }
        ClusterKind::Cross => {
            overlapping = true;
            let base = long_spec(rng, (42.0, 60.0), (2.8, 3.4));
            let crossing = long_spec(rng, (44.0, 58.0), (2.6, 3.2)).with_bend(uniform(rng, -0.15, 0.15));
            let t = uniform(rng, 0.4, 0.6);
            let hw = base.width_profile[0];
            // sink the tip through the whole base and beyond by an overhang
            let overhang = uniform(rng, 10.0, 16.0);
            let crossing = attach(&base, crossing, t, side, lean * 0.6, 2.0 * hw + overhang);
            specs.extend([base, crossing]);
            joints.push((0, 1));
        }
        ClusterKind::Chain(k) => {
            specs.push(long_spec(rng, (44.0, 60.0), (2.8, 3.5)));
            for i in 1..k {
                let child = long_spec(rng, (36.0, 54.0), (2.7, 3.4)).with_bend(uniform(rng, -0.2, 0.2));
                let t = uniform(rng, 0.35, 0.65);
                let s = if rng.gen() { 1.0 } else { -1.0 };
                let l = uniform(rng, -0.45, 0.45);
                specs.push(attach(&specs[i - 1], child, t, s, l, 0.8));
                joints.push((i - 1, i));
            }
        }
    }
    let mut masks = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let seed = rng.gen::<u64>() ^ i as u64;
        match gen_chromosome(seed, spec) {
            Ok(r) => masks.push(r.pixels().to_vec()),
            Err(SynthError::SelfIntersecting) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    // non-adjacent members must stay well apart
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if joints.contains(&(i, j)) {
                continue;
            }
            if min_distance(&masks[i], &masks[j]) < 4.0 {
                return Ok(None);
            }
        }
    }
    if !overlapping {
        // touching kinds tile the foreground: shared pixels go to the earlier mask
        for j in 1..masks.len() {
            let earlier: HashSet<Point> = masks[..j].iter().flatten().copied().collect();
            masks[j].retain(|p| !earlier.contains(p));
        }
    }
    let fragment_pixels: Vec<Point> = {
        let mut all: Vec<Point> = masks.iter().flatten().copied().collect();
        all.sort_by_key(|p| (p.y, p.x));
        all.dedup();
        all
    };
    if components(&fragment_pixels, Connectivity::Eight).len() != 1 {
        return Ok(None);
    }
    if masks
        .iter()
        .any(|m| m.is_empty() || components(m, Connectivity::Eight).len() != 1)
    {
        return Ok(None);
    }
    let mut notch_points = Vec::new();
    for &(b, c) in &joints {
        let tip_spine = specs[c].origin;
        let hw = specs[c].width_profile[0];
        let axis = (specs[c].heading.cos(), specs[c].heading.sin());
        let tip = (tip_spine.0 - axis.0 * hw, tip_spine.1 - axis.1 * hw);
        let tip = if kind == ClusterKind::Cross {
            // the junction on the crossing body's side of the base
            let reach = 2.0 * specs[b].width_profile[0] + hw + 1.0;
            (tip_spine.0 + axis.0 * reach, tip_spine.1 + axis.1 * reach)
        } else {
            tip
        };
        match junction_notches(&fragment_pixels, &masks[b], &masks[c], tip, axis) {
            Some(n) => notch_points.push(n),
            None => return Ok(None),
        }
    }
    let members = (0..masks.len()).collect();
    Ok(Some(Fragment {
        masks,
        clusters: vec![FragmentCluster {
            kind,
            members,
            notch_points,
        }],
    }))
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub n_singles: usize,
    pub clusters: Vec<ClusterKind>,
    /// Minimum background gap between placed objects, pixels.
    pub gap: i32,
}

impl SceneParams {
    pub fn new(n_singles: usize, clusters: Vec<ClusterKind>) -> Self {
        Self {
            width: 640,
            height: 640,
            n_singles,
            clusters,
            gap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCluster {
    pub kind: ClusterKind,
    pub members: Vec<usize>,
    pub notch_points: Vec<[Point; 2]>,
}

/// A generated scene: image plus per-chromosome masks. Overlap pixels of
/// overlapping kinds belong to both masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub seed: u64,
    pub image: BinaryImage,
    pub masks: Vec<Vec<Point>>,
    pub clusters: Vec<TruthCluster>,
}

impl SceneTruth {
    pub fn chromosome_count(&self) -> usize {
        self.masks.len()
    }

    pub fn cluster_pixels(&self, cluster: &TruthCluster) -> Vec<Point> {
        let mut all: Vec<Point> = cluster
            .members
            .iter()
            .flat_map(|&m| self.masks[m].iter().copied())
            .collect();
        all.sort_by_key(|p| (p.y, p.x));
        all.dedup();
        all
    }
}

/// Places singles and cluster fragments on one canvas without contact.
pub fn gen_scene(seed: u64, params: &SceneParams) -> Result<SceneTruth> {
    let (w, h) = (params.width, params.height);
    let mut image =
        BinaryImage::new(w.max(1), h.max(1)).map_err(|_| SynthError::CanvasTooSmall { width: w, height: h })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fragments: Vec<Fragment> = Vec::new();
    for &kind in &params.clusters {
        fragments.push(gen_cluster(rng.gen(), kind)?);
    }
    for _ in 0..params.n_singles {
        let mut single = None;
        for _ in 0..20 {
            let spec = random_single_spec(&mut rng);
            if let Ok(r) = gen_chromosome(rng.gen(), &spec) {
                single = Some(r);
                break;
            }
        }
        let r = single.ok_or_else(|| SynthError::PlacementFailed("single chromosome".into()))?;
        fragments.push(Fragment {
            masks: vec![r.pixels().to_vec()],
            clusters: Vec::new(),
        });
    }
    // blocked = placed pixels dilated by the gap
    let mut blocked = vec![false; w * h];
    let mut masks = Vec::new();
    let mut clusters = Vec::new();
    for mut frag in fragments {
        let pixels = frag.pixels();
        let bb = crate::raster::BBox::of(&pixels).expect("fragment has pixels");
        if bb.width() + 2 > w || bb.height() + 2 > h {
            return Err(SynthError::CanvasTooSmall { width: w, height: h });
        }
        let mut placed = false;
        for _ in 0..2000 {
            let ox = rng.gen_range(1..=(w - bb.width() - 1) as i32) - bb.min_x;
            let oy = rng.gen_range(1..=(h - bb.height() - 1) as i32) - bb.min_y;
            let free = pixels
                .iter()
                .all(|p| !blocked[(p.y + oy) as usize * w + (p.x + ox) as usize]);
            if !free {
                continue;
            }
            frag.translate(ox, oy);
            for p in frag.pixels() {
                image.set(p.x, p.y, true);
                for dy in -params.gap..=params.gap {
                    for dx in -params.gap..=params.gap {
                        let (qx, qy) = (p.x + dx, p.y + dy);
                        if qx >= 0 && qy >= 0 && (qx as usize) < w && (qy as usize) < h {
                            blocked[qy as usize * w + qx as usize] = true;
                        }
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::CanvasTooSmall { width: w, height: h });
        }
        let base = masks.len();
        for c in frag.clusters {
            clusters.push(TruthCluster {
                kind: c.kind,
                members: c.members.iter().map(|m| m + base).collect(),
                notch_points: c.notch_points,
            });
        }
        masks.extend(frag.masks);
    }
    Ok(SceneTruth {
        seed,
        image,
        masks,
        clusters,
    })
}

// ---------------------------------------------------------------------------
// Sidecar
// ---------------------------------------------------------------------------

/// Row run `[y, x_start, x_end]`, inclusive.
pub type Run = [i32; 3];

fn to_runs(points: &[Point]) -> Vec<Run> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| (p.y, p.x));
    let mut runs: Vec<Run> = Vec::new();
    for p in sorted {
        match runs.last_mut() {
            Some(r) if r[0] == p.y && r[2] + 1 == p.x => r[2] = p.x,
            _ => runs.push([p.y, p.x, p.x]),
        }
    }
    runs
}

fn from_runs(runs: &[Run]) -> Vec<Point> {
    runs.iter()
        .flat_map(|r| (r[1]..=r[2]).map(move |x| Point::new(x, r[0])))
        .collect()
}

/// On-disk ground truth stored next to the scene image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub format: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub image: String,
    pub chromosomes: Vec<SidecarChromosome>,
    pub clusters: Vec<TruthCluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarChromosome {
    pub id: usize,
    pub pixel_count: usize,
    pub runs: Vec<Run>,
}

pub const SIDECAR_FORMAT: &str = "chromoseg-truth/1";

impl TruthSidecar {
    pub fn from_truth(truth: &SceneTruth, image_name: &str) -> Self {
        Self {
            format: SIDECAR_FORMAT.into(),
            seed: truth.seed,
            width: truth.image.width(),
            height: truth.image.height(),
            image: image_name.into(),
            chromosomes: truth
                .masks
                .iter()
                .enumerate()
                .map(|(id, m)| SidecarChromosome {
                    id,
                    pixel_count: m.len(),
                    runs: to_runs(m),
                })
                .collect(),
            clusters: truth.clusters.clone(),
        }
    }

    pub fn into_truth(self, image: BinaryImage) -> SceneTruth {
        SceneTruth {
            seed: self.seed,
            image,
            masks: self.chromosomes.iter().map(|c| from_runs(&c.runs)).collect(),
            clusters: self.clusters,
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    pub cluster: usize,
    pub kind: ClusterKind,
    pub detected: bool,
    pub resolved: bool,
    pub leaves: usize,
    pub members: usize,
    /// IoU of each member's matched leaf (0 when unmatched), in member order.
    pub ious: Vec<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub clusters: usize,
    pub clusters_detected: usize,
    pub flagged: usize,
    pub flagged_true: usize,
    pub precision: f64,
    pub recall: f64,
    pub separation_successes: usize,
    pub success_rate: f64,
    pub matches: Vec<ClusterMatch>,
}

impl EvalResult {
    /// Pools several scenes' results; rates are recomputed from the counts.
    pub fn merge(results: &[EvalResult]) -> EvalResult {
        let mut out = EvalResult {
            clusters: 0,
            clusters_detected: 0,
            flagged: 0,
            flagged_true: 0,
            precision: 0.0,
            recall: 0.0,
            separation_successes: 0,
            success_rate: 0.0,
            matches: Vec::new(),
        };
        for r in results {
            out.clusters += r.clusters;
            out.clusters_detected += r.clusters_detected;
            out.flagged += r.flagged;
            out.flagged_true += r.flagged_true;
            out.separation_successes += r.separation_successes;
            out.matches.extend(r.matches.iter().cloned());
        }
        out.finish_rates();
        out
    }

    fn finish_rates(&mut self) {
        let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        self.precision = ratio(self.flagged_true, self.flagged);
        self.recall = ratio(self.clusters_detected, self.clusters);
        self.success_rate = ratio(self.separation_successes, self.clusters);
    }
}

pub fn iou(a: &[Point], b: &[Point]) -> f64 {
    let sa: HashSet<Point> = a.iter().copied().collect();
    let inter = b.iter().filter(|p| sa.contains(p)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy maximum-IoU one-to-one matching. Returns `(leaf, mask, iou)`
/// triples; ties go to the lower leaf, then the lower mask index.
pub fn greedy_match(leaves: &[&[Point]], masks: &[&[Point]]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (li, l) in leaves.iter().enumerate() {
        for (mi, m) in masks.iter().enumerate() {
            let v = iou(l, m);
            if v > 0.0 {
                pairs.push((li, mi, v));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_l = vec![false; leaves.len()];
    let mut used_m = vec![false; masks.len()];
    let mut out = Vec::new();
    for (l, m, v) in pairs {
        if !used_l[l] && !used_m[m] {
            used_l[l] = true;
            used_m[m] = true;
            out.push((l, m, v));
        }
    }
    out
}

/// Scores a separation run against the scene truth.
///
/// A truth cluster is separated correctly when its tree is resolved, has
/// exactly one leaf per member chromosome, and every member is matched to
/// a leaf with IoU at least `iou_min`.
pub fn evaluate(forest: &SeparationForest, truth: &SceneTruth, iou_min: f64) -> EvalResult {
    let leaves_per_tree: Vec<Vec<Vec<Point>>> = forest
        .trees
        .iter()
        .map(|t| t.leaves().iter().map(|r| r.pixels().to_vec()).collect())
        .collect();
    let roots: Vec<&Region> = forest.trees.iter().map(|t| t.root()).collect();
    let mut tree_is_truth_cluster = vec![false; forest.trees.len()];
    let mut matches = Vec::new();
    for (ci, cluster) in truth.clusters.iter().enumerate() {
        let pixels = truth.cluster_pixels(cluster);
        let probe = pixels[0];
        let tree_idx = roots.iter().position(|r| r.contains(probe));
        let members: Vec<&[Point]> = cluster.members.iter().map(|&m| truth.masks[m].as_slice()).collect();
        let mut m = ClusterMatch {
            cluster: ci,
            kind: cluster.kind,
            detected: false,
            resolved: false,
            leaves: 0,
            members: members.len(),
            ious: vec![0.0; members.len()],
            success: false,
        };
        if let Some(ti) = tree_idx {
            tree_is_truth_cluster[ti] = true;
            m.detected = forest.reports[ti].is_cluster;
            m.resolved = forest.trees[ti].is_resolved();
            let leaves: Vec<&[Point]> = leaves_per_tree[ti].iter().map(|l| l.as_slice()).collect();
            m.leaves = leaves.len();
            for (_, mi, v) in greedy_match(&leaves, &members) {
                m.ious[mi] = v;
            }
            m.success = m.detected && m.resolved && m.leaves == m.members && m.ious.iter().all(|&v| v >= iou_min);
        }
        matches.push(m);
    }
    let flagged = forest.reports.iter().filter(|r| r.is_cluster).count();
    let flagged_true = forest
        .reports
        .iter()
        .zip(&tree_is_truth_cluster)
        .filter(|(r, &t)| r.is_cluster && t)
        .count();
    let mut out = EvalResult {
        clusters: truth.clusters.len(),
        clusters_detected: matches.iter().filter(|m| m.detected).count(),
        flagged,
        flagged_true,
        precision: 0.0,
        recall: 0.0,
        separation_successes: matches.iter().filter(|m| m.success).count(),
        success_rate: 0.0,
        matches,
    };
    out.finish_rates();
    out
}

/// Scores a label map written by an earlier run. Without the run's trees a
/// truth cluster counts as detected when more than one label covers it,
/// and a scene component as flagged when it was split.
pub fn evaluate_labels(map: &LabelMap, truth: &SceneTruth, iou_min: f64) -> EvalResult {
    let mut by_label: Vec<Vec<Point>> = vec![Vec::new(); map.max_label() as usize + 1];
    for y in 0..map.height() {
        for x in 0..map.width() {
            let l = map.get(x, y);
            if l > 0 {
                by_label[l as usize].push(Point::new(x as i32, y as i32));
            }
        }
    }
    let labels_under = |pixels: &[Point]| {
        let mut ls: Vec<u32> = pixels
            .iter()
            .filter(|p| (p.x as usize) < map.width() && (p.y as usize) < map.height())
            .map(|p| map.get(p.x as usize, p.y as usize))
            .filter(|&l| l > 0)
            .collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    };
    let mut matches = Vec::new();
    let mut cluster_pixels = HashSet::new();
    for (ci, cluster) in truth.clusters.iter().enumerate() {
        let pixels = truth.cluster_pixels(cluster);
        cluster_pixels.extend(pixels.iter().copied());
        let ls = labels_under(&pixels);
        let leaves: Vec<&[Point]> = ls.iter().map(|&l| by_label[l as usize].as_slice()).collect();
        let members: Vec<&[Point]> = cluster.members.iter().map(|&m| truth.masks[m].as_slice()).collect();
        let mut ious = vec![0.0; members.len()];
        for (_, mi, v) in greedy_match(&leaves, &members) {
            ious[mi] = v;
        }
        let detected = leaves.len() > 1;
        let success = leaves.len() == members.len() && ious.iter().all(|&v| v >= iou_min);
        matches.push(ClusterMatch {
            cluster: ci,
            kind: cluster.kind,
            detected,
            resolved: detected,
            leaves: leaves.len(),
            members: members.len(),
            ious,
            success,
        });
    }
    let scene = label_components(&truth.image, Connectivity::Eight);
    let mut flagged = 0;
    let mut flagged_true = 0;
    for region in extract_regions(&scene) {
        if labels_under(region.pixels()).len() > 1 {
            flagged += 1;
            if cluster_pixels.contains(&region.pixels()[0]) {
                flagged_true += 1;
            }
        }
    }
    let mut out = EvalResult {
        clusters: truth.clusters.len(),
        clusters_detected: matches.iter().filter(|m| m.detected).count(),
        flagged,
        flagged_true,
        precision: 0.0,
        recall: 0.0,
        separation_successes: matches.iter().filter(|m| m.success).count(),
        success_rate: 0.0,
        matches,
    };
    out.finish_rates();
    out
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

/// Cluster kinds of the two-chromosome benchmark: 40 touch, 30 partial
/// overlap, 20 end touch and 10 cross, interleaved.
pub fn pair_benchmark_kinds() -> Vec<ClusterKind> {
    let mut kinds = Vec::with_capacity(100);
    kinds.extend(std::iter::repeat_n(ClusterKind::Touch, 40));
    kinds.extend(std::iter::repeat_n(ClusterKind::PartialOverlap, 30));
    kinds.extend(std::iter::repeat_n(ClusterKind::EndTouch, 20));
    kinds.extend(std::iter::repeat_n(ClusterKind::Cross, 10));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    kinds.shuffle(&mut rng);
    kinds
}

/// Scene parameters for a benchmark scene holding `clusters`, topped up
/// with singles to 40-46 objects.
pub fn benchmark_scene_params(seed: u64, clusters: Vec<ClusterKind>) -> SceneParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_a5a5);
    let total = rng.gen_range(40..=46usize);
    SceneParams::new(total.saturating_sub(clusters.len()), clusters)
}
