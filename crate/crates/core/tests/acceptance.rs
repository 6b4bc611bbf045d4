//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

use std::collections::{HashSet, VecDeque};
use std::f64::consts::PI;
use std::time::Instant;

use chromoseg::cli;
use chromoseg::cutline::{angle_profile, sdtp, separate_all, SeparationForest, SeparatorConfig, VamdConfig};
use chromoseg::detect::{detect_clusters, DetectConfig};
use chromoseg::geometry::{
    convex_hull, count_endpoints, hull_pixel_count, min_enclosing_ellipse, skeletonize, trace_boundary,
};
use chromoseg::raster::{
    encode_pbm, extract_regions, label_components, BinaryImage, Connectivity, PnmEncoding, Point, Region,
};
use chromoseg::synth::{
    benchmark_scene_params, evaluate, gen_chromosome, gen_scene, pair_benchmark_kinds, ChromosomeSpec, ClusterKind,
    EvalResult, SceneTruth,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn regions_of(img: &BinaryImage) -> Vec<Region> {
    extract_regions(&label_components(img, Connectivity::Eight))
}

fn run_scene(truth: &SceneTruth, sep: &SeparatorConfig) -> (SeparationForest, EvalResult) {
    let forest = separate_all(&regions_of(&truth.image), &DetectConfig::default(), sep).expect("valid config");
    let eval = evaluate(&forest, truth, 0.7);
    (forest, eval)
}

fn pair_benchmark() -> Vec<SceneTruth> {
    let kinds = pair_benchmark_kinds();
    (0..25u64)
        .map(|s| {
            let seed = 1000 + s;
            let clusters = kinds[s as usize * 4..s as usize * 4 + 4].to_vec();
            gen_scene(seed, &benchmark_scene_params(seed, clusters)).expect("benchmark scene")
        })
        .collect()
}

fn criterion_1(scenes: &[SceneTruth], forests: &mut Vec<SeparationForest>) -> Outcome {
    let start = Instant::now();
    let mut results = Vec::new();
    for truth in scenes {
        let (forest, eval) = run_scene(truth, &SeparatorConfig::default());
        forests.push(forest);
        results.push(eval);
    }
    let secs = start.elapsed().as_secs_f64();
    let all = EvalResult::merge(&results);
    let mut by_kind = Vec::new();
    for kind in ["touch", "partial_overlap", "end_touch", "cross"] {
        let ms: Vec<_> = all.matches.iter().filter(|m| m.kind.name() == kind).collect();
        by_kind.push(format!(
            "{kind} {}/{}",
            ms.iter().filter(|m| m.success).count(),
            ms.len()
        ));
    }
    outcome(
        all.clusters == 100 && all.success_rate >= 0.85 && secs < 60.0,
        format!(
            "success {}/{} = {:.3} (need >= 0.85) [{}], {:.1}s",
            all.separation_successes,
            all.clusters,
            all.success_rate,
            by_kind.join(", "),
            secs
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut resolved = 0;
    let mut bad = Vec::new();
    for s in 0..20u64 {
        let seed = 2000 + s;
        let truth = gen_scene(seed, &benchmark_scene_params(seed, vec![ClusterKind::Chain(3)])).expect("chain scene");
        let (forest, _) = run_scene(&truth, &SeparatorConfig::default());
        let probe = truth.masks[truth.clusters[0].members[0]][0];
        let tree = forest
            .trees
            .iter()
            .find(|t| t.root().contains(probe))
            .expect("cluster tree");
        if tree.is_resolved() && tree.cut_count() > 0 {
            resolved += 1;
            if tree.cut_count() != 2 || tree.leaves().len() != 3 {
                bad.push(format!(
                    "seed {seed}: {} cuts, {} leaves",
                    tree.cut_count(),
                    tree.leaves().len()
                ));
            }
        }
    }
    outcome(
        resolved >= 18 && bad.is_empty(),
        format!(
            "{resolved}/20 resolved (need >= 18); N-1 violations: {}",
            if bad.is_empty() { "none".into() } else { bad.join("; ") }
        ),
    )
}

fn criterion_3() -> Outcome {
    let pool = [
        ClusterKind::Touch,
        ClusterKind::PartialOverlap,
        ClusterKind::EndTouch,
        ClusterKind::Cross,
        ClusterKind::Chain(3),
    ];
    let mut clusters = 0;
    let mut detected = 0;
    let mut skeleton_ok = true;
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let seed = 3000 + s;
        let k = 2 + (s as usize % 4);
        let kinds: Vec<ClusterKind> = (0..k).map(|i| pool[(s as usize + i) % pool.len()]).collect();
        let truth = gen_scene(seed, &benchmark_scene_params(seed, kinds)).expect("detection scene");
        let regions = regions_of(&truth.image);
        let detection = detect_clusters(&regions, &DetectConfig::default()).expect("valid config");
        let calls = detection.skeleton_calls();
        skeleton_ok &= calls < regions.len();
        worst = worst.max(calls as f64 / regions.len() as f64);
        for c in &truth.clusters {
            clusters += 1;
            let probe = truth.masks[c.members[0]][0];
            let idx = regions.iter().position(|r| r.contains(probe)).expect("cluster region");
            detected += detection.reports[idx].is_cluster as usize;
        }
    }
    let recall = detected as f64 / clusters as f64;
    outcome(
        recall >= 0.9 && skeleton_ok,
        format!("recall {detected}/{clusters} = {recall:.3} (need >= 0.9); max skeleton share {worst:.2} (need < 1 per scene)"),
    )
}

fn flood_fill_labels(img: &BinaryImage) -> Vec<u32> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !img.pixels()[start] || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        let mut q = VecDeque::from([start]);
        while let Some(i) = q.pop_front() {
            let (x, y) = ((i % w) as i32, (i / w) as i32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if img.pixels()[j] && out[j] == 0 {
                        out[j] = next;
                        q.push_back(j);
                    }
                }
            }
        }
    }
    out
}

fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut fwd = std::collections::HashMap::new();
    let mut bwd = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| (x == 0) == (y == 0) && *fwd.entry(x).or_insert(y) == y && *bwd.entry(y).or_insert(x) == x)
}

fn brute_hull(points: &[Point]) -> Vec<Point> {
    // extreme points: not inside or on any triangle/segment of other points
    let uniq: Vec<Point> = points.iter().copied().collect::<HashSet<_>>().into_iter().collect();
    let cross = |o: Point, a: Point, b: Point| {
        (a.x - o.x) as i64 * (b.y - o.y) as i64 - (a.y - o.y) as i64 * (b.x - o.x) as i64
    };
    let on_segment = |p: Point, a: Point, b: Point| {
        cross(a, b, p) == 0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    let mut out = Vec::new();
    'next: for &p in &uniq {
        for &a in &uniq {
            for &b in &uniq {
                if a == p || b == p {
                    continue;
                }
                if on_segment(p, a, b) {
                    continue 'next;
                }
                for &c in &uniq {
                    if c == p || c == a || c == b {
                        continue;
                    }
                    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
                    let inside = (d1 >= 0 && d2 >= 0 && d3 >= 0) || (d1 <= 0 && d2 <= 0 && d3 <= 0);
                    if inside && cross(a, b, c) != 0 {
                        continue 'next;
                    }
                }
            }
        }
        out.push(p);
    }
    out.sort();
    out
}

fn random_blob(rng: &mut ChaCha8Rng, size: i32) -> Region {
    loop {
        let mut pts = HashSet::new();
        for _ in 0..rng.gen_range(1..5) {
            let (cx, cy, r) = (
                rng.gen_range(8..size - 8),
                rng.gen_range(8..size - 8),
                rng.gen_range(3..8),
            );
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                        pts.insert(Point::new(x, y));
                    }
                }
            }
        }
        let pts: Vec<Point> = pts.into_iter().collect();
        let comps = chromoseg::raster::components(&pts, Connectivity::Eight);
        let biggest = comps.into_iter().max_by_key(|c| c.len()).expect("non-empty");
        if biggest.len() >= 20 {
            return Region::from_pixels(1, biggest).expect("connected");
        }
    }
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Direction as the bisector of the two chords, change as the wrapped
/// difference of consecutive directions.
fn direct_profile(b: &[Point]) -> Vec<f64> {
    let n = b.len();
    let chord = |i: usize, o: usize| {
        let (p, q) = (b[i], b[(i + o) % n]);
        if p == q {
            None
        } else {
            Some(((q.y - p.y) as f64).atan2((q.x - p.x) as f64))
        }
    };
    let theta: Vec<f64> = (0..n)
        .map(|i| match (chord(i, 4), chord(i, 5)) {
            (Some(a), Some(c)) if wrap(c - a).abs() < PI - 1e-12 => wrap(a + wrap(c - a) / 2.0),
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => 0.0,
        })
        .collect();
    (0..n).map(|i| wrap(theta[(i + 1) % n] - theta[i]).abs()).collect()
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut label_ok = 0;
    for _ in 0..200 {
        let density = rng.gen_range(0.2..0.7);
        let pixels: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
        let img = BinaryImage::from_pixels(32, 32, pixels).expect("32x32");
        let ours = label_components(&img, Connectivity::Eight);
        label_ok += same_partition(ours.labels(), &flood_fill_labels(&img)) as usize;
    }
    notes.push(format!("labels {label_ok}/200"));
    let mut hull_ok = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(-10..10), rng.gen_range(-10..10)))
            .collect();
        let mut ours = convex_hull(&pts).vertices;
        ours.sort();
        hull_ok += (ours == brute_hull(&pts)) as usize;
    }
    notes.push(format!("hull {hull_ok}/100"));
    let plus: Vec<Point> = (-2..=2).flat_map(|i| [Point::new(i, 0), Point::new(0, i)]).collect();
    let plus = Region::from_pixels(1, plus).expect("plus");
    let plus_count = hull_pixel_count(&convex_hull(plus.pixels()), plus.bbox());
    notes.push(format!("plus hull {plus_count}"));
    let line: Vec<Point> = (0..4).map(|x| Point::new(x, 0)).collect();
    let dis = sdtp(&line).expect("4 candidates");
    let sdtp_ok = dis == vec![6.0, 4.0, 4.0, 6.0];
    notes.push(format!("sdtp {dis:?}"));
    let mut profile_ok = 0;
    let mut max_err = 0.0f64;
    let mut tested = 0;
    while tested < 50 {
        let region = random_blob(&mut rng, 64);
        let boundary = trace_boundary(&region);
        if boundary.n() > 500 || boundary.n() < 6 {
            continue;
        }
        tested += 1;
        let ours = angle_profile(&boundary, &VamdConfig::default()).expect("long enough");
        let direct = direct_profile(&boundary.points);
        let err = ours
            .delta
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_err = max_err.max(err);
        profile_ok += (err <= 1e-9) as usize;
    }
    notes.push(format!("angle profile {profile_ok}/50 (max err {max_err:.1e})"));
    outcome(
        label_ok == 200 && hull_ok == 100 && plus_count == 13 && sdtp_ok && profile_ok == 50,
        notes.join(", "),
    )
}

fn rect(w: i32, h: i32) -> Vec<Point> {
    (0..h).flat_map(|y| (0..w).map(move |x| Point::new(x, y))).collect()
}

fn disk(r: i32) -> Vec<Point> {
    (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| Point::new(x, y)))
        .filter(|p| p.x * p.x + p.y * p.y <= r * r)
        .collect()
}

fn criterion_5() -> Outcome {
    let rect_ratio = min_enclosing_ellipse(&rect(21, 5), 1e-7).expect("ellipse").axis_ratio;
    let disk_ratio = min_enclosing_ellipse(&disk(10), 1e-7).expect("ellipse").axis_ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut witness_ok = 0;
    for _ in 0..50 {
        let n = rng.gen_range(6..40);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(-30..30), rng.gen_range(-12..12)))
            .collect();
        let hull = convex_hull(&pts).vertices;
        if hull.len() < 3 {
            witness_ok += 1;
            continue;
        }
        let e = min_enclosing_ellipse(&hull, 1e-9).expect("ellipse");
        let s = 1.0 - 1e-5;
        let outside = |a: f64, b: f64| hull.iter().any(|p| e.level_scaled(p.x as f64, p.y as f64, a, b) > 1.0);
        let contains = hull.iter().all(|p| e.level(p.x as f64, p.y as f64) <= 1.0 + 1e-9);
        witness_ok += (contains && outside(s, 1.0) && outside(1.0, s)) as usize;
    }
    outcome(
        (rect_ratio - 0.2).abs() <= 0.02 && (disk_ratio - 1.0).abs() <= 0.05 && witness_ok == 50,
        format!("21x5 ratio {rect_ratio:.4}, r10 disk ratio {disk_ratio:.4}, minimality witness {witness_ok}/50"),
    )
}

fn union_region(specs: &[(u64, ChromosomeSpec)]) -> Region {
    let mut all: Vec<Point> = specs
        .iter()
        .flat_map(|(s, spec)| gen_chromosome(*s, spec).expect("valid spec").pixels().to_vec())
        .collect();
    all.sort();
    all.dedup();
    Region::from_pixels(1, all).expect("connected")
}

fn criterion_6() -> Outcome {
    let arm = |h: f64, len: f64| ChromosomeSpec::straight((0.0, 0.0), h, len, 3.0).with_roughness(0.3);
    let bar = union_region(&[(60, arm(0.4, 50.0))]);
    let y = union_region(&[
        (61, arm(PI / 2.0, 26.0)),
        (62, arm(PI / 2.0 + 2.0 * PI / 3.0, 26.0)),
        (63, arm(PI / 2.0 - 2.0 * PI / 3.0, 26.0)),
    ]);
    let x = union_region(&[
        (64, arm(0.5, 25.0)),
        (65, arm(0.5 + PI, 25.0)),
        (66, arm(0.5 + 1.3, 25.0)),
        (67, arm(0.5 + 1.3 + PI, 25.0)),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(68);
    let (r_in, r_out) = (9.0 + rng.gen_range(0.0..1.0), 16.0 + rng.gen_range(0.0..1.0));
    let ring: Vec<Point> = (-18..=18)
        .flat_map(|yy| (-18..=18).map(move |xx| Point::new(xx, yy)))
        .filter(|p| {
            let r = ((p.x * p.x + p.y * p.y) as f64).sqrt();
            r >= r_in && r <= r_out
        })
        .collect();
    let ring = Region::from_pixels(1, ring).expect("annulus");
    let counts: Vec<usize> = [&bar, &y, &x, &ring]
        .iter()
        .map(|r| count_endpoints(&skeletonize(r)))
        .collect();
    outcome(
        counts == vec![2, 3, 4, 0],
        format!(
            "bar {}, Y {}, X {}, annulus {} (want 2, 3, 4, 0)",
            counts[0], counts[1], counts[2], counts[3]
        ),
    )
}

fn criterion_7() -> Outcome {
    let sizes = [
        (20, 10),
        (30, 8),
        (12, 12),
        (40, 15),
        (25, 6),
        (16, 30),
        (9, 27),
        (50, 20),
        (33, 13),
        (18, 7),
    ];
    let mut ok = 0;
    let mut failures = Vec::new();
    for &(w, h) in &sizes {
        let region = Region::from_pixels(1, rect(w, h)).expect("rect");
        let b = trace_boundary(&region);
        let n = b.n();
        let prof = angle_profile(&b, &VamdConfig::default()).expect("long enough");
        let corners = [
            Point::new(0, 0),
            Point::new(w - 1, 0),
            Point::new(w - 1, h - 1),
            Point::new(0, h - 1),
        ];
        let corner_idx: Vec<usize> = corners
            .iter()
            .map(|c| b.points.iter().position(|p| p == c).expect("corner on boundary"))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| prof.delta[j].total_cmp(&prof.delta[i]).then(i.cmp(&j)));
        let close = |i: usize, c: usize| {
            let d = i.abs_diff(corner_idx[c]);
            d.min(n - d) <= 5
        };
        // a peak may sit near two corners on a short side, so match exactly
        let top = &order[..4];
        let good = permutations4()
            .iter()
            .any(|perm| top.iter().zip(perm).all(|(&i, &c)| close(i, c)));
        if good {
            ok += 1;
        } else {
            failures.push(format!("{w}x{h}"));
        }
    }
    outcome(
        ok == sizes.len(),
        format!(
            "{ok}/{} rectangles{}",
            sizes.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" (failed: {})", failures.join(", "))
            }
        ),
    )
}

fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for code in 0..256usize {
        let p = [code & 3, (code >> 2) & 3, (code >> 4) & 3, code >> 6];
        if (0..4).all(|k| p.contains(&k)) {
            out.push(p);
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut wins = [0usize; 2];
    for s in 0..20u64 {
        let seed = 4000 + s;
        let truth =
            gen_scene(seed, &benchmark_scene_params(seed, vec![ClusterKind::EndTouch])).expect("end_touch scene");
        for (k, lambda) in [1000.0, 0.0].into_iter().enumerate() {
            let cfg = SeparatorConfig {
                lambda,
                ..SeparatorConfig::default()
            };
            wins[k] += run_scene(&truth, &cfg).1.separation_successes;
        }
    }
    outcome(
        wins[0] > wins[1],
        format!(
            "lambda=1000: {}/20, lambda=0: {}/20 (need strictly greater)",
            wins[0], wins[1]
        ),
    )
}

fn criterion_9(scenes: &[SceneTruth], forests: &[SeparationForest]) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("scene.pbm");
    std::fs::write(&input, encode_pbm(&scenes[0].image, PnmEncoding::Raw)).expect("write input");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let labels = dir.path().join(format!("labels{run}.pgm"));
        let report = dir.path().join(format!("report{run}.json"));
        let args = [
            "chromoseg",
            "segment",
            input.to_str().unwrap(),
            "-o",
            labels.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ];
        let code = cli::run(args, &mut Vec::new(), &mut Vec::new());
        let bytes = (
            std::fs::read(&labels).unwrap_or_default(),
            std::fs::read_to_string(&report).unwrap_or_default(),
        );
        outputs.push((code, bytes));
    }
    // the report names its input path, which is the same in both runs
    let identical = outputs[0] == outputs[1] && !outputs[0].1 .0.is_empty();
    let mut conserved = 0;
    let mut trees = 0;
    for forest in forests {
        for tree in &forest.trees {
            trees += 1;
            let leaves = tree.leaves();
            let sum: usize = leaves.iter().map(|l| l.len()).sum();
            let union: HashSet<Point> = leaves.iter().flat_map(|l| l.pixels().iter().copied()).collect();
            let root: HashSet<Point> = tree.root().pixels().iter().copied().collect();
            conserved += (sum == tree.root().len() && union == root) as usize;
        }
    }
    outcome(
        identical && conserved == trees && !forests.is_empty(),
        format!(
            "segment twice: exit {} / {}, outputs {}; pixel conservation {conserved}/{trees} trees over {} scenes",
            outputs[0].0,
            outputs[1].0,
            if identical { "byte-identical" } else { "DIFFER" },
            forests.len()
        ),
    )
}

fn main() {
    let scenes = pair_benchmark();
    let mut forests = Vec::new();
    let checks: Vec<(&str, Outcome)> = vec![
        ("1 synthetic pair benchmark", criterion_1(&scenes, &mut forests)),
        ("2 chain(3) recursion N-1", criterion_2()),
        ("3 detection cascade recall and skeleton budget", criterion_3()),
        ("4 oracle equivalences", criterion_4()),
        ("5 ellipse numerics", criterion_5()),
        ("6 skeleton endpoint counts", criterion_6()),
        ("7 angle variation at rectangle corners", criterion_7()),
        ("8 lambda regression on end_touch", criterion_8()),
        ("9 determinism and pixel conservation", criterion_9(&scenes, &forests)),
    ];
    let mut failed = 0;
    for (name, o) in &checks {
        println!(
            "criterion {name}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.pass as usize;
    }
    println!("acceptance: {}/{} criteria passed", checks.len() - failed, checks.len());
    // failures are reported above; set ACCEPTANCE_STRICT=1 to also fail the run
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
