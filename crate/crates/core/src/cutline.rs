//! Cut-line separation of chromosome clusters.
//!
//! For a cluster's outer contour `B[0..n)` the direction of motion at each
//! pixel is estimated from chords to a few pixels ahead, its change from one
//! pixel to the next gives the variation profile, and pixels whose
//! variation is below the contour average are discarded. Among the
//! remaining `M` candidates each gets `cost = dis - lambda * delta`, where
//! `dis` is the sum of its distances to all other candidates, and the two
//! cheapest candidates that are far enough apart along the contour become
//! the cross-points. The cluster is cut along the digital segment joining
//! them. Pieces that still test as clusters are cut again.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{classify_region, detect_clusters, CriteriaReport, DetectConfig, DetectError, Thresholds};
use crate::geometry::{trace_boundary, Boundary};
use crate::raster::{components, Connectivity, LabelMap, LocalMask, Point, RasterError, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutError {
    #[error("boundary shorter than estimator window ({n} < {needed})")]
    BoundaryTooShort { n: usize, needed: usize },
    #[error("invalid estimator configuration: {0}")]
    BadEstimator(String),
    #[error("no cross-point candidates")]
    NoCandidates,
    #[error("insufficient candidates ({0} < 2)")]
    InsufficientCandidates(usize),
    #[error("degenerate candidate geometry")]
    DegenerateCandidates,
    #[error("cut endpoints coincide")]
    CoincidentEndpoints,
    #[error("cut endpoint {0} is not a region pixel")]
    EndpointOutsideRegion(Point),
    #[error("cut ineffective")]
    CutIneffective,
    #[error("maximum number of cuts reached")]
    MaxCutsReached,
}

#[derive(Debug, Error)]
pub enum SeparateError {
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid separator configuration: {0}")]
    Config(String),
}

/// How the direction of motion at a contour pixel is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Estimator {
    /// Circular mean of the chord directions to `B[i + o]` for each offset.
    FixedOffsets { offsets: Vec<usize> },
    /// Weighted circular mean over `n1` pixels ahead and `n2` behind with
    /// weights `exp(-d^2 / weight_scale^2)`.
    Weighted { n1: usize, n2: usize, weight_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VamdConfig {
    pub estimator: Estimator,
    pub lambda1: f64,
}

impl Default for VamdConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::FixedOffsets { offsets: vec![4, 5] },
            lambda1: 1.0,
        }
    }
}

impl VamdConfig {
    fn window(&self) -> Result<usize, CutError> {
        match &self.estimator {
            Estimator::FixedOffsets { offsets } => {
                if offsets.is_empty() || offsets.contains(&0) {
                    return Err(CutError::BadEstimator("offsets must be non-empty and >= 1".into()));
                }
                Ok(*offsets.iter().max().expect("non-empty"))
            }
            Estimator::Weighted { n1, n2, weight_scale } => {
                if *n1 == 0 || *n2 == 0 || !(*weight_scale > 0.0) {
                    return Err(CutError::BadEstimator(
                        "n1, n2 and weight_scale must be positive".into(),
                    ));
                }
                Ok((*n1).max(*n2))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleProfile {
    /// Direction of motion per contour index, radians in (-pi, pi].
    pub theta: Vec<f64>,
    /// `|wrap(theta[i + 1] - theta[i])|`, radians in [0, pi].
    pub delta: Vec<f64>,
    pub delta_avg: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

fn chord_angle(from: Point, to: Point) -> Option<f64> {
    if from == to {
        return None;
    }
    Some(wrap_angle(((to.y - from.y) as f64).atan2((to.x - from.x) as f64)))
}

/// Direction of motion along the contour.
///
/// Chords are oriented along the direction of travel (from the earlier to
/// the later pixel) so that backward chords in weighted mode agree with
/// forward ones. Zero-length chords, which occur where the walk doubles
/// back over a one-pixel protrusion, are skipped.
pub fn angle_profile(boundary: &Boundary, cfg: &VamdConfig) -> Result<AngleProfile, CutError> {
    let window = cfg.window()?;
    let n = boundary.n();
    if n < window + 1 {
        return Err(CutError::BoundaryTooShort { n, needed: window + 1 });
    }
    let mut theta = Vec::with_capacity(n);
    for i in 0..n as isize {
        let here = boundary.at(i);
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        let mut first: Option<f64> = None;
        let mut add = |from: Point, to: Point, w: f64| {
            if let Some(a) = chord_angle(from, to) {
                first.get_or_insert(a);
                sx += w * a.cos();
                sy += w * a.sin();
            }
        };
        match &cfg.estimator {
            Estimator::FixedOffsets { offsets } => {
                for &o in offsets {
                    add(here, boundary.at(i + o as isize), 1.0);
                }
            }
            Estimator::Weighted { n1, n2, weight_scale } => {
                let s2 = weight_scale * weight_scale;
                for j in 1..=*n1 as isize {
                    let other = boundary.at(i + j);
                    add(here, other, (-(here.dist2(other) as f64) / s2).exp());
                }
                for j in 1..=*n2 as isize {
                    let other = boundary.at(i - j);
                    add(other, here, (-(here.dist2(other) as f64) / s2).exp());
                }
            }
        }
        let t = if sx.hypot(sy) > 1e-12 {
            wrap_angle(sy.atan2(sx))
        } else {
            first.unwrap_or(0.0)
        };
        theta.push(t);
    }
    let delta: Vec<f64> = (0..n)
        .map(|i| wrap_angle(theta[(i + 1) % n] - theta[i]).abs())
        .collect();
    let delta_avg = delta.iter().sum::<f64>() / n as f64;
    Ok(AngleProfile {
        theta,
        delta,
        delta_avg,
    })
}

/// Indices whose variation reaches `lambda1` times the contour average.
/// Equality is kept; a relative slack of 1e-12 absorbs summation rounding.
pub fn vamd_filter(profile: &AngleProfile, lambda1: f64) -> Result<Vec<usize>, CutError> {
    let bar = lambda1 * profile.delta_avg;
    let slack = 1e-12 * bar.abs().max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = profile
        .delta
        .iter()
        .enumerate()
        .filter(|(_, &d)| d >= bar - slack)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(CutError::NoCandidates);
    }
    Ok(keep)
}

/// Sum of Euclidean distances from each candidate to every other.
pub fn sdtp(points: &[Point]) -> Result<Vec<f64>, CutError> {
    if points.len() < 2 {
        return Err(CutError::InsufficientCandidates(points.len()));
    }
    Ok(points
        .iter()
        .map(|&p| points.iter().map(|&q| p.dist(q)).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorConfig {
    /// Weight of the angle variation against the distance sum.
    pub lambda: f64,
    /// Minimum cyclic index distance between the two cross-points;
    /// `None` means `max(5, n / 20)`.
    pub min_arc_sep: Option<usize>,
    pub max_cuts: usize,
    pub vamd: VamdConfig,
    /// Only pairs of concave boundary points may be cut between.
    pub require_concave: bool,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            min_arc_sep: None,
            max_cuts: 10,
            vamd: VamdConfig::default(),
            require_concave: true,
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<(), SeparateError> {
        if !(self.lambda >= 0.0) {
            return Err(SeparateError::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.vamd.lambda1 >= 0.0) {
            return Err(SeparateError::Config(format!(
                "lambda1 must be >= 0, got {}",
                self.vamd.lambda1
            )));
        }
        if self.min_arc_sep == Some(0) {
            return Err(SeparateError::Config("min_arc_sep must be >= 1".into()));
        }
        if self.max_cuts == 0 {
            return Err(SeparateError::Config("max_cuts must be >= 1".into()));
        }
        self.vamd.window().map_err(|e| SeparateError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn min_arc_sep_for(&self, n: usize) -> usize {
        self.min_arc_sep.unwrap_or_else(|| (n / 20).max(5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub point: Point,
    pub delta_theta: f64,
    pub dis: f64,
    pub cost: f64,
    pub concave: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossPointSelection {
    pub candidates: Vec<Candidate>,
    /// Boundary indices of the two cross-points, cheaper first.
    pub chosen: (usize, usize),
    pub m: usize,
}

impl CrossPointSelection {
    fn candidate(&self, index: usize) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| c.index == index)
            .expect("chosen index is a candidate")
    }

    pub fn chosen_points(&self) -> (Point, Point) {
        (self.candidate(self.chosen.0).point, self.candidate(self.chosen.1).point)
    }

    pub fn chosen_costs(&self) -> (f64, f64) {
        (self.candidate(self.chosen.0).cost, self.candidate(self.chosen.1).cost)
    }
}

/// Per boundary index, whether a concavity lies within `reach` steps along
/// the contour. Index i bends inward when the chord joining the points
/// `reach` steps before and after has its midpoint off the region (no
/// lattice point next to it is foreground).
pub fn concavity(region: &Region, boundary: &Boundary, reach: usize) -> Vec<bool> {
    let k = reach as isize;
    let n = boundary.n();
    let inward: Vec<bool> = (0..n as isize)
        .map(|i| {
            let (a, b) = (boundary.at(i - k), boundary.at(i + k));
            let (sx, sy) = (a.x + b.x, a.y + b.y);
            let xs = [sx.div_euclid(2), (sx + 1).div_euclid(2)];
            let ys = [sy.div_euclid(2), (sy + 1).div_euclid(2)];
            !xs.iter()
                .any(|&x| ys.iter().any(|&y| region.contains(Point::new(x, y))))
        })
        .collect();
    (0..n as isize)
        .map(|i| (-k..=k).any(|d| inward[(i + d).rem_euclid(n as isize) as usize]))
        .collect()
}

/// Whether most of the digital segment `p..q` lies inside `region`.
/// Chords between two notch apexes clip some background near each end.
fn segment_inside(region: &Region, p: Point, q: Point) -> bool {
    let line = bresenham(p, q);
    let outside = line.iter().filter(|&&x| !region.contains(x)).count();
    2 * outside <= line.len()
}

fn cyclic_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Picks the admissible candidate pair with the smallest total cost.
///
/// A pair is admissible when its contour indices are at least `min_arc_sep`
/// apart cyclically, its points differ, and the digital segment between
/// them runs mostly inside `region`. Ties go to the pair whose cheaper
/// member, then dearer member, comes first in cost order. With
/// `require_concave` the winning pair must also lie near boundary
/// concavities, otherwise the geometry counts as degenerate.
pub fn select_cross_points(
    region: &Region,
    boundary: &Boundary,
    candidates: &[usize],
    profile: &AngleProfile,
    cfg: &SeparatorConfig,
) -> Result<CrossPointSelection, CutError> {
    let reach = cfg.vamd.window()?;
    let concave = concavity(region, boundary, reach);
    let points: Vec<Point> = candidates.iter().map(|&i| boundary.points[i]).collect();
    let dis = sdtp(&points)?;
    let mut cands: Vec<Candidate> = candidates
        .iter()
        .zip(points)
        .zip(dis)
        .map(|((&index, point), dis)| {
            let delta_theta = profile.delta[index];
            let concave = !cfg.require_concave || concave.get(index).copied().unwrap_or(false);
            Candidate {
                index,
                point,
                delta_theta,
                dis,
                cost: dis - cfg.lambda * delta_theta,
                concave,
            }
        })
        .collect();
    let n = boundary.n();
    let sep = cfg.min_arc_sep_for(n);
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[a]
            .cost
            .total_cmp(&cands[b].cost)
            .then(cands[a].index.cmp(&cands[b].index))
    });
    let mut best: Option<(f64, usize, usize)> = None;
    for (ra, &a) in order.iter().enumerate() {
        if let Some((sum, _, _)) = best {
            // remaining pairs cannot beat the best: costs are sorted
            if cands[a].cost * 2.0 > sum {
                break;
            }
        }
        for &b in &order[ra + 1..] {
            let sum = cands[a].cost + cands[b].cost;
            if let Some((best_sum, _, _)) = best {
                if sum >= best_sum {
                    break;
                }
            }
            let admissible = cyclic_distance(cands[a].index, cands[b].index, n) >= sep
                && cands[a].point != cands[b].point
                && segment_inside(region, cands[a].point, cands[b].point);
            if admissible {
                best = Some((sum, a, b));
                break;
            }
        }
    }
    let (_, a, b) = best.ok_or(CutError::DegenerateCandidates)?;
    // a cut between convex points would slice a single body
    if !(cands[a].concave && cands[b].concave) {
        return Err(CutError::DegenerateCandidates);
    }
    let chosen = (cands[a].index, cands[b].index);
    let m = cands.len();
    cands.sort_by_key(|c| c.index);
    Ok(CrossPointSelection {
        candidates: cands,
        chosen,
        m,
    })
}

/// Digital segment from `p` to `q`, both included.
pub fn bresenham(p: Point, q: Point) -> Vec<Point> {
    let (mut x, mut y) = (p.x, p.y);
    let dx = (q.x - p.x).abs();
    let dy = -(q.y - p.y).abs();
    let sx = if p.x < q.x { 1 } else { -1 };
    let sy = if p.y < q.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push(Point::new(x, y));
        if x == q.x && y == q.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    pub parts: (Region, Region),
    /// Region pixels removed by the cut and then handed back to a part.
    pub line: Vec<Point>,
    pub thickened: bool,
    /// The cut left more than two pieces; the small ones were merged back.
    pub fragmented: bool,
}

/// Cuts `region` along the segment `p`-`q`.
///
/// The one-pixel segment is tried first; if it leaves the region in one
/// piece it is thickened to two pixels perpendicular to its dominant axis.
/// Removed pixels, and any pieces beyond the two largest, are returned to
/// the nearest of the two parts by growing both parts outward in lockstep
/// through the removed pixels.
pub fn apply_cut(region: &Region, p: Point, q: Point) -> Result<CutResult, CutError> {
    if p == q {
        return Err(CutError::CoincidentEndpoints);
    }
    for e in [p, q] {
        if !region.contains(e) {
            return Err(CutError::EndpointOutsideRegion(e));
        }
    }
    let thin = bresenham(p, q);
    let (dx, dy) = ((q.x - p.x).abs(), (q.y - p.y).abs());
    let shift = if dx >= dy { (0, 1) } else { (1, 0) };
    let thick: Vec<Point> = thin
        .iter()
        .copied()
        .chain(thin.iter().map(|t| Point::new(t.x + shift.0, t.y + shift.1)))
        .collect();

    for (line, thickened) in [(thin, false), (thick, true)] {
        let mut cut_mask = LocalMask::from_points(region.pixels(), 1);
        let mut removed = Vec::new();
        for &l in &line {
            if cut_mask.get(l) {
                cut_mask.set(l, false);
                removed.push(l);
            }
        }
        let remaining = cut_mask.points();
        let mut comps = components(&remaining, Connectivity::Eight);
        if comps.len() < 2 {
            continue;
        }
        let fragmented = comps.len() > 2;
        // two largest, ties to the earlier piece in raster order
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by(|&a, &b| comps[b].len().cmp(&comps[a].len()).then(a.cmp(&b)));
        let (mut ia, mut ib) = (order[0], order[1]);
        if ib < ia {
            std::mem::swap(&mut ia, &mut ib);
        }
        let mut loose = removed.clone();
        for (k, c) in comps.iter().enumerate() {
            if k != ia && k != ib {
                loose.extend_from_slice(c);
            }
        }
        let b = std::mem::take(&mut comps[ib]);
        let a = std::mem::take(&mut comps[ia]);
        let (a, b) = grow_into(region, a, b, &loose);
        let label = region.label();
        let parts = (
            Region::from_pixels_unchecked(label, a).expect("non-empty part"),
            Region::from_pixels_unchecked(label, b).expect("non-empty part"),
        );
        return Ok(CutResult {
            parts,
            line: removed,
            thickened,
            fragmented,
        });
    }
    Err(CutError::CutIneffective)
}

/// Assigns each loose pixel to part 0 or 1 by simultaneous breadth-first
/// growth; a pixel reached by both parts in the same round goes to the part
/// with the closer adjacent pixel, then to part 0.
fn grow_into(region: &Region, a: Vec<Point>, b: Vec<Point>, loose: &[Point]) -> (Vec<Point>, Vec<Point>) {
    let mut owner = LocalMask::from_points(region.pixels(), 1);
    let idx =
        |m: &LocalMask, p: Point| -> usize { ((p.y - m.origin.y) as usize) * m.width + (p.x - m.origin.x) as usize };
    // 0 = unowned, 1 = part a, 2 = part b
    let mut tag = vec![0u8; owner.width * owner.height];
    for bit in owner.bits.iter_mut() {
        *bit = false;
    }
    for &p in loose {
        owner.set(p, true);
    }
    for &p in &a {
        tag[idx(&owner, p)] = 1;
    }
    for &p in &b {
        tag[idx(&owner, p)] = 2;
    }
    let (mut a, mut b) = (a, b);
    let mut pending: Vec<Point> = loose.to_vec();
    pending.sort_by_key(|p| (p.y, p.x));
    pending.dedup();
    while !pending.is_empty() {
        let mut assigned: Vec<(Point, u8)> = Vec::new();
        for &p in &pending {
            let mut best: Option<(i64, u8)> = None;
            for &(dx, dy) in Connectivity::Eight.offsets() {
                let q = Point::new(p.x + dx, p.y + dy);
                if q.x < owner.origin.x
                    || q.y < owner.origin.y
                    || (q.x - owner.origin.x) as usize >= owner.width
                    || (q.y - owner.origin.y) as usize >= owner.height
                {
                    continue;
                }
                let t = tag[idx(&owner, q)];
                if t == 0 {
                    continue;
                }
                let cand = (p.dist2(q), t);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
            if let Some((_, t)) = best {
                assigned.push((p, t));
            }
        }
        if assigned.is_empty() {
            // unreachable for a connected region; fall back to part a
            a.extend_from_slice(&pending);
            break;
        }
        for &(p, t) in &assigned {
            tag[idx(&owner, p)] = t;
            if t == 1 {
                a.push(p);
            } else {
                b.push(p);
            }
        }
        pending.retain(|p| tag[idx(&owner, *p)] == 0);
    }
    (a, b)
}

/// Details of a successful split, kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub parts: (Region, Region),
    pub segment: (Point, Point),
    pub costs: (f64, f64),
    pub m: usize,
    pub boundary_len: usize,
    pub thickened: bool,
    pub fragmented: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationStage {
    AngleProfile,
    Vamd,
    Sdtp,
    Selection,
    Cut,
    Recursion,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage:?}: {error}")]
pub struct Unresolved {
    pub stage: SeparationStage,
    pub error: CutError,
}

/// One cut of a cluster into two pieces.
pub fn separate_cluster(region: &Region, cfg: &SeparatorConfig) -> Result<Split, Unresolved> {
    let fail = |stage| move |error| Unresolved { stage, error };
    let boundary = trace_boundary(region);
    let profile = angle_profile(&boundary, &cfg.vamd).map_err(fail(SeparationStage::AngleProfile))?;
    let candidates = vamd_filter(&profile, cfg.vamd.lambda1).map_err(fail(SeparationStage::Vamd))?;
    if candidates.len() < 2 {
        return Err(Unresolved {
            stage: SeparationStage::Sdtp,
            error: CutError::InsufficientCandidates(candidates.len()),
        });
    }
    let selection =
        select_cross_points(region, &boundary, &candidates, &profile, cfg).map_err(fail(SeparationStage::Selection))?;
    let (p, q) = selection.chosen_points();
    let cut = apply_cut(region, p, q).map_err(fail(SeparationStage::Cut))?;
    Ok(Split {
        parts: cut.parts,
        segment: (p, q),
        costs: selection.chosen_costs(),
        m: selection.m,
        boundary_len: boundary.n(),
        thickened: cut.thickened,
        fragmented: cut.fragmented,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Tests as a single chromosome.
    Leaf,
    /// Was cut into `children`.
    Cut {
        split: Box<SplitSummary>,
        children: [usize; 2],
    },
    /// Still a cluster but could not be cut.
    Unresolved(Unresolved),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub segment: (Point, Point),
    pub costs: (f64, f64),
    pub m: usize,
    pub boundary_len: usize,
    pub thickened: bool,
    pub fragmented: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub region: Region,
    pub depth: usize,
    pub kind: NodeKind,
}

/// Record of the cuts applied to one region of the scene; node 0 is the
/// root. Terminal nodes (leaves and unresolved nodes) partition the root's
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationTree {
    pub nodes: Vec<TreeNode>,
}

impl SeparationTree {
    pub fn root(&self) -> &Region {
        &self.nodes[0].region
    }

    pub fn cut_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Cut { .. }))
            .count()
    }

    /// Terminal nodes in depth-first order, children in cut order.
    pub fn terminal_nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match &self.nodes[i].kind {
                NodeKind::Cut { children, .. } => {
                    stack.push(children[1]);
                    stack.push(children[0]);
                }
                _ => out.push(&self.nodes[i]),
            }
        }
        out
    }

    /// Final pieces, including any unresolved remainders.
    pub fn leaves(&self) -> Vec<&Region> {
        self.terminal_nodes().into_iter().map(|n| &n.region).collect()
    }

    pub fn unresolved(&self) -> Vec<&Unresolved> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Unresolved(u) => Some(u),
                _ => None,
            })
            .collect()
    }

    pub fn is_resolved(&self) -> bool {
        self.unresolved().is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Builds the separation tree of a flagged cluster, re-testing every piece
/// against the frozen scene thresholds.
pub fn separate_tree(
    root: Region,
    thresholds: &Thresholds,
    detect: &DetectConfig,
    cfg: &SeparatorConfig,
) -> SeparationTree {
    let mut nodes = vec![TreeNode {
        region: root,
        depth: 0,
        kind: NodeKind::Leaf,
    }];
    let mut cuts = 0usize;
    // every queued node has already been classified as a cluster
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        if cuts >= cfg.max_cuts {
            nodes[i].kind = NodeKind::Unresolved(Unresolved {
                stage: SeparationStage::Recursion,
                error: CutError::MaxCutsReached,
            });
            continue;
        }
        match separate_cluster(&nodes[i].region, cfg) {
            Err(u) => nodes[i].kind = NodeKind::Unresolved(u),
            Ok(split) => {
                cuts += 1;
                let depth = nodes[i].depth + 1;
                let first = nodes.len();
                let (a, b) = split.parts;
                for part in [a, b] {
                    let flagged = classify_region(&part, thresholds, detect.ellipse_tol).is_cluster;
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        region: part,
                        depth,
                        kind: NodeKind::Leaf,
                    });
                    if flagged {
                        queue.push_back(id);
                    }
                }
                nodes[i].kind = NodeKind::Cut {
                    split: Box::new(SplitSummary {
                        segment: split.segment,
                        costs: split.costs,
                        m: split.m,
                        boundary_len: split.boundary_len,
                        thickened: split.thickened,
                        fragmented: split.fragmented,
                    }),
                    children: [first, first + 1],
                };
            }
        }
    }
    SeparationTree { nodes }
}

/// Detection results plus one tree per input region, ordered by label.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationForest {
    pub thresholds: Thresholds,
    pub reports: Vec<CriteriaReport>,
    pub trees: Vec<SeparationTree>,
}

impl SeparationForest {
    pub fn clusters_flagged(&self) -> usize {
        self.reports.iter().filter(|r| r.is_cluster).count()
    }

    pub fn clusters_unresolved(&self) -> usize {
        self.trees.iter().filter(|t| !t.is_resolved()).count()
    }

    pub fn total_cuts(&self) -> usize {
        self.trees.iter().map(|t| t.cut_count()).sum()
    }

    /// Every final piece gets its own label, 1..K, in tree order.
    pub fn label_map(&self, width: usize, height: usize) -> Result<LabelMap, RasterError> {
        let mut regions = Vec::new();
        for tree in &self.trees {
            for leaf in tree.leaves() {
                regions.push(leaf.clone().with_label(regions.len() as u32 + 1));
            }
        }
        LabelMap::from_regions(width, height, &regions)
    }
}

/// Detects clusters among `regions` and separates each one recursively.
pub fn separate_all(
    regions: &[Region],
    detect_cfg: &DetectConfig,
    sep_cfg: &SeparatorConfig,
) -> Result<SeparationForest, SeparateError> {
    sep_cfg.validate()?;
    let detection = detect_clusters(regions, detect_cfg)?;
    let mut sorted: Vec<&Region> = regions.iter().collect();
    sorted.sort_by_key(|r| r.label());
    // clusters are independent; the ordered collect keeps output deterministic
    let trees = sorted
        .par_iter()
        .zip(detection.reports.par_iter())
        .map(|(region, report)| {
            if report.is_cluster {
                separate_tree((*region).clone(), &detection.thresholds, detect_cfg, sep_cfg)
            } else {
                SeparationTree {
                    nodes: vec![TreeNode {
                        region: (*region).clone(),
                        depth: 0,
                        kind: NodeKind::Leaf,
                    }],
                }
            }
        })
        .collect();
    Ok(SeparationForest {
        thresholds: detection.thresholds,
        reports: detection.reports,
        trees,
    })
}
