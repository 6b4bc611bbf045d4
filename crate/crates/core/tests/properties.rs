use std::collections::HashSet;

use chromoseg::cutline::{apply_cut, separate_all, separate_cluster, SeparatorConfig};
use chromoseg::detect::{detect_clusters, DetectConfig, ThresholdMode};
use chromoseg::geometry::{convex_hull, min_enclosing_ellipse, trace_boundary};
use chromoseg::raster::{components, extract_regions, label_components, BinaryImage, Connectivity, Point, Region};
use chromoseg::synth::{gen_cluster, ClusterKind};
use proptest::prelude::*;

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = BinaryImage> {
    proptest::collection::vec(prop::bool::weighted(0.45), w * h)
        .prop_map(move |px| BinaryImage::from_pixels(w, h, px).unwrap())
}

fn points_strategy() -> impl Strategy<Value = Vec<Point>> {
    proptest::collection::vec((0..30i32, 0..30i32).prop_map(|(x, y)| Point::new(x, y)), 1..60)
}

fn blob(seed_pts: &[Point]) -> Option<Region> {
    // the largest 8-component of a thickened point cloud
    let mut set = HashSet::new();
    for p in seed_pts {
        for dy in -2..=2 {
            for dx in -2..=2 {
                set.insert(Point::new(p.x + dx, p.y + dy));
            }
        }
    }
    let pts: Vec<Point> = set.into_iter().collect();
    let best = components(&pts, Connectivity::Eight)
        .into_iter()
        .max_by_key(|c| c.len())?;
    Region::from_pixels(1, best).ok()
}

fn shift(region: &Region, dx: i32, dy: i32) -> Region {
    let pts = region.pixels().iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
    Region::from_pixels(region.label(), pts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_partition_foreground(img in image_strategy(24, 20)) {
        let map = label_components(&img, Connectivity::Eight);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let l = map.get(x, y);
                prop_assert_eq!(l != 0, img.get(x as i32, y as i32));
                // 8-neighbours in the foreground share a label
                if l != 0 && x + 1 < img.width() {
                    for (nx, ny) in [(x + 1, y), (x + 1, y.wrapping_sub(1)), (x + 1, y + 1), (x, y + 1)] {
                        if ny < img.height() && map.get(nx, ny) != 0 {
                            prop_assert_eq!(map.get(nx, ny), l);
                        }
                    }
                }
            }
        }
        for r in extract_regions(&map) {
            prop_assert_eq!(components(r.pixels(), Connectivity::Eight).len(), 1);
        }
    }

    #[test]
    fn hull_encloses_and_is_convex(pts in points_strategy()) {
        let hull = convex_hull(&pts);
        for p in &pts {
            prop_assert!(hull.contains(*p));
        }
        let v = &hull.vertices;
        if v.len() >= 3 {
            for i in 0..v.len() {
                let (o, a, b) = (v[i], v[(i + 1) % v.len()], v[(i + 2) % v.len()]);
                let c = (a.x - o.x) as i64 * (b.y - o.y) as i64 - (a.y - o.y) as i64 * (b.x - o.x) as i64;
                prop_assert!(c > 0, "turn at {:?} is not strictly convex", a);
            }
        }
    }

    #[test]
    fn ellipse_encloses_every_point(pts in points_strategy()) {
        let fit = min_enclosing_ellipse(&pts, 1e-7).unwrap();
        prop_assert!(fit.axis_ratio > 0.0 && fit.axis_ratio <= 1.0);
        for p in &pts {
            prop_assert!(fit.level(p.x as f64, p.y as f64) <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn boundary_points_touch_background(pts in points_strategy()) {
        if let Some(region) = blob(&pts) {
            let b = trace_boundary(&region);
            for p in &b.points {
                prop_assert!(region.contains(*p));
                let exposed = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| !region.contains(Point::new(p.x + dx, p.y + dy)));
                prop_assert!(exposed);
            }
        }
    }

    #[test]
    fn detection_ignores_region_order(seed in 0u64..1000, rot in 0usize..7) {
        let kinds = [ClusterKind::Touch, ClusterKind::Cross, ClusterKind::EndTouch];
        let mut regions = Vec::new();
        for (i, kind) in kinds.iter().enumerate() {
            let frag = gen_cluster(seed + i as u64, *kind).unwrap();
            for (j, m) in frag.masks.iter().enumerate() {
                let r = Region::from_pixels((regions.len() + 1) as u32, m.clone()).unwrap();
                regions.push(shift(&r, 100 * j as i32, 100 * i as i32));
            }
        }
        let before = detect_clusters(&regions, &DetectConfig::default()).unwrap();
        let k = rot % regions.len();
        regions.rotate_left(k);
        let after = detect_clusters(&regions, &DetectConfig::default()).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn looser_hull_threshold_flags_superset(seed in 0u64..1000, t in 0.3f64..0.9) {
        let frag = gen_cluster(seed, ClusterKind::Chain(3)).unwrap();
        let mut regions: Vec<Region> = frag.masks.iter().enumerate().map(|(i, m)| Region::from_pixels(i as u32 + 1, m.clone()).unwrap()).collect();
        let merged: Vec<Point> = frag.masks.iter().flatten().copied().collect();
        regions.push(shift(&Region::from_pixels(9, merged).unwrap(), 200, 0));
        let flagged = |h: f64| {
            let cfg = DetectConfig { hull_threshold: ThresholdMode::Fixed(h), ellipse_threshold: ThresholdMode::Fixed(0.3), ..DetectConfig::default() };
            detect_clusters(&regions, &cfg).unwrap().cluster_labels().into_iter().collect::<HashSet<u32>>()
        };
        let strict = flagged(t);
        let loose = flagged((t + 0.08).min(0.99));
        prop_assert!(strict.is_subset(&loose));
    }

    #[test]
    fn cut_conserves_pixels(w in 8i32..30, h in 8i32..30, a in 0usize..1000, b in 0usize..1000) {
        let region = Region::from_pixels(1, (0..h).flat_map(|y| (0..w).map(move |x| Point::new(x, y))).collect()).unwrap();
        let boundary = trace_boundary(&region);
        let (p, q) = (boundary.points[a % boundary.n()], boundary.points[b % boundary.n()]);
        prop_assume!(p != q);
        if let Ok(cut) = apply_cut(&region, p, q) {
            let (l, r) = &cut.parts;
            let left: HashSet<Point> = l.pixels().iter().copied().collect();
            prop_assert!(r.pixels().iter().all(|p| !left.contains(p)));
            prop_assert_eq!(l.len() + r.len(), region.len());
            prop_assert!(l.pixels().iter().chain(r.pixels()).all(|p| region.contains(*p)));
        }
    }

    #[test]
    fn separation_follows_translation(seed in 0u64..500, dx in -40i32..40, dy in -40i32..40) {
        let frag = gen_cluster(seed, ClusterKind::Touch).unwrap();
        let merged: Vec<Point> = frag.masks.iter().flatten().copied().collect();
        let region = Region::from_pixels(1, merged).unwrap();
        let moved = shift(&region, dx, dy);
        let cfg = SeparatorConfig::default();
        match (separate_cluster(&region, &cfg), separate_cluster(&moved, &cfg)) {
            (Ok(a), Ok(b)) => {
                let (p, q) = a.segment;
                prop_assert_eq!(b.segment, (Point::new(p.x + dx, p.y + dy), Point::new(q.x + dx, q.y + dy)));
                prop_assert_eq!(&shift(&a.parts.0, dx, dy), &b.parts.0);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "outcomes differ: {:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }
}

#[test]
fn lambda_scaling_does_not_change_delta_only_choice() {
    // with huge lambda the angle term dominates; doubling it keeps the pick
    let frag = gen_cluster(7, ClusterKind::Touch).unwrap();
    let region = Region::from_pixels(1, frag.masks.concat()).unwrap();
    let a = separate_cluster(
        &region,
        &SeparatorConfig {
            lambda: 1e9,
            ..SeparatorConfig::default()
        },
    );
    let b = separate_cluster(
        &region,
        &SeparatorConfig {
            lambda: 2e9,
            ..SeparatorConfig::default()
        },
    );
    assert_eq!(a.map(|s| s.segment), b.map(|s| s.segment));
}

#[test]
fn separate_all_is_deterministic() {
    let mut regions = Vec::new();
    for (i, kind) in [ClusterKind::Touch, ClusterKind::PartialOverlap, ClusterKind::Chain(3)]
        .into_iter()
        .enumerate()
    {
        let frag = gen_cluster(40 + i as u64, kind).unwrap();
        let merged: Vec<Point> = frag.masks.iter().flatten().copied().collect();
        regions.push(shift(
            &Region::from_pixels(i as u32 + 1, merged).unwrap(),
            150 * i as i32,
            0,
        ));
    }
    let a = separate_all(&regions, &DetectConfig::default(), &SeparatorConfig::default()).unwrap();
    let b = separate_all(&regions, &DetectConfig::default(), &SeparatorConfig::default()).unwrap();
    assert_eq!(a, b);
    for (tree, region) in a.trees.iter().zip(&regions) {
        let total: usize = tree.leaves().iter().map(|l| l.len()).sum();
        assert_eq!(total, region.len());
    }
}
