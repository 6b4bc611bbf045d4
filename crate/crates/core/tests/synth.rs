use std::collections::HashSet;
use std::f64::consts::PI;

use chromoseg::detect::{detect_clusters, DetectConfig, ThresholdSource};
use chromoseg::geometry::{count_endpoints, skeletonize, trace_boundary};
use chromoseg::raster::{extract_regions, label_components, Connectivity, Point, Region};
use chromoseg::synth::{gen_chromosome, gen_cluster, gen_scene, ChromosomeSpec, ClusterKind, SceneParams};

fn merged(masks: &[Vec<Point>]) -> Region {
    Region::from_pixels(1, masks.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn straight_chromosome_is_single() {
    let spec = ChromosomeSpec::straight((20.0, 20.0), 0.3, 30.0, 2.0);
    let region = gen_chromosome(1, &spec).unwrap();
    let det = detect_clusters(&[region], &DetectConfig::default()).unwrap();
    assert!(!det.reports[0].is_cluster);
}

#[test]
fn right_angle_bend_keeps_two_endpoints() {
    for seed in 0..5 {
        let spec = ChromosomeSpec::straight((30.0, 30.0), 0.0, 40.0, 3.0).with_bend(PI / 2.0);
        let region = gen_chromosome(seed, &spec).unwrap();
        assert_eq!(count_endpoints(&skeletonize(&region)), 2, "seed {seed}");
    }
}

#[test]
fn cross_has_four_endpoints() {
    for seed in 0..10 {
        let frag = gen_cluster(seed, ClusterKind::Cross).unwrap();
        assert_eq!(count_endpoints(&skeletonize(&merged(&frag.masks))), 4, "seed {seed}");
    }
}

#[test]
fn chain_records_members_and_junctions() {
    for seed in 0..10 {
        let frag = gen_cluster(seed, ClusterKind::Chain(3)).unwrap();
        assert_eq!(frag.masks.len(), 3);
        assert_eq!(frag.clusters[0].notch_points.len(), 2);
        // touching kinds tile the foreground
        let total: usize = frag.masks.iter().map(|m| m.len()).sum();
        assert_eq!(total, merged(&frag.masks).len());
    }
}

#[test]
fn partial_overlap_masks_share_pixels() {
    let frag = gen_cluster(3, ClusterKind::PartialOverlap).unwrap();
    let a: HashSet<Point> = frag.masks[0].iter().copied().collect();
    assert!(frag.masks[1].iter().any(|p| a.contains(p)));
}

/// Foreground pixels within radius `r` of `p`: larger on concave stretches.
fn fill_around(region: &Region, p: Point, r: i32) -> usize {
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r && region.contains(Point::new(p.x + dx, p.y + dy)))
        .count()
}

#[test]
fn touch_notches_sit_on_concavity_peaks() {
    for seed in 0..10 {
        let frag = gen_cluster(seed, ClusterKind::Touch).unwrap();
        let region = merged(&frag.masks);
        let b = trace_boundary(&region);
        let n = b.n() as isize;
        let score: Vec<usize> = b.points.iter().map(|&p| fill_around(&region, p, 4)).collect();
        let typical = {
            let mut s = score.clone();
            s.sort_unstable();
            s[s.len() / 2]
        };
        for notch in frag.clusters[0].notch_points[0] {
            let i = b.points.iter().position(|&p| p == notch).expect("notch on boundary") as isize;
            // exhaustive scan of the neighbourhood for the local peak
            let peak = (-3..=3).map(|d| score[(i + d).rem_euclid(n) as usize]).max().unwrap();
            let around = (-12..=12).map(|d| score[(i + d).rem_euclid(n) as usize]).max().unwrap();
            assert_eq!(
                peak, around,
                "seed {seed}: notch {notch:?} is not at the local concavity peak"
            );
            assert!(peak > typical, "seed {seed}: notch {notch:?} is not concave");
        }
    }
}

#[test]
fn scene_counts_match_request() {
    let truth = gen_scene(
        9,
        &SceneParams::new(44, vec![ClusterKind::Touch, ClusterKind::EndTouch]),
    )
    .unwrap();
    // each pair cluster is one component holding two chromosomes
    assert_eq!(truth.chromosome_count(), 48);
    let regions = extract_regions(&label_components(&truth.image, Connectivity::Eight));
    assert_eq!(regions.len(), 46);
    let det = detect_clusters(&regions, &DetectConfig::default()).unwrap();
    assert_eq!(det.thresholds.hull_source, ThresholdSource::Auto);
    assert_eq!(det.thresholds.ellipse_source, ThresholdSource::Auto);
}

#[test]
fn scenes_are_reproducible() {
    let params = SceneParams::new(10, vec![ClusterKind::Cross, ClusterKind::Chain(3)]);
    assert_eq!(gen_scene(4, &params).unwrap(), gen_scene(4, &params).unwrap());
    assert_ne!(
        gen_scene(4, &params).unwrap().image,
        gen_scene(5, &params).unwrap().image
    );
}
