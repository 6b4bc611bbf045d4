//! Command-line front end: `segment`, `detect`, `synth` and `eval`.
//!
//! Exit codes: 0 on success, 2 when a run finished but left clusters
//! unresolved, 1 on any I/O, format or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cutline::{separate_all, Estimator, SeparatorConfig, VamdConfig};
use crate::detect::{detect_clusters, DetectConfig, ThresholdMode};
use crate::raster::{
    decode_image, encode_label_map, encode_pbm, extract_regions, label_components, otsu_level, otsu_threshold_with,
    BinaryImage, Connectivity, DecodedImage, LabelMap, PnmEncoding, Polarity, Region,
};
use crate::report::{sha256_hex, sig6, ConfigSnapshot, InputInfo, RunReport, Timings};
use crate::synth::{
    benchmark_scene_params, evaluate, evaluate_labels, gen_scene, pair_benchmark_kinds, ClusterKind, EvalResult,
    SceneParams, SceneTruth, TruthSidecar,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNRESOLVED: i32 = 2;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct CliError(pub String);

impl CliError {
    fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError(format!("{}: {e}", path.display()))
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "chromoseg",
    version,
    about = "Detect and separate touching or overlapping chromosomes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect clusters, cut them apart and write a label map plus report.
    Segment(SegmentArgs),
    /// Run only the detection cascade and write a report.
    Detect(DetectArgs),
    /// Generate synthetic scenes with ground-truth sidecars.
    Synth(SynthArgs),
    /// Score segmentations against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Weight of the angle variation in the cross-point cost.
    #[arg(long, default_value_t = 1000.0)]
    pub lambda: f64,
    /// Candidate filter factor on the mean angle variation.
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    /// Chord offsets for the direction estimate.
    #[arg(long, value_delimiter = ',', default_value = "4,5")]
    pub offsets: Vec<usize>,
    /// Use the weighted estimator with the given `n1,n2` instead of offsets.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub weighted: Option<Vec<usize>>,
    /// Ellipse axis-ratio threshold: `auto` or a value in (0, 1).
    #[arg(long, default_value = "auto")]
    pub ellipse_threshold: ThresholdMode,
    /// Convex-hull ratio threshold: `auto` or a value in (0, 1).
    #[arg(long, default_value = "auto")]
    pub hull_threshold: ThresholdMode,
    /// More skeleton endpoints than this marks a cluster.
    #[arg(long, default_value_t = 2)]
    pub endpoint_limit: usize,
    /// Minimum contour separation of the cross-points: `auto` or a count.
    #[arg(long, default_value = "auto")]
    pub min_arc_sep: String,
    /// Cut budget per cluster.
    #[arg(long, default_value_t = 10)]
    pub max_cuts: usize,
    /// Pixel connectivity for labeling: 4 or 8.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(4..=8))]
    pub connectivity: u8,
    /// Which intensity side of the Otsu level is foreground for grayscale input.
    #[arg(long, value_enum, default_value_t = Polarity::Auto)]
    pub polarity: Polarity,
    /// Allow cuts whose endpoints are not near a boundary concavity.
    #[arg(long)]
    pub allow_convex_cuts: bool,
}

impl Default for PipelineArgs {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            lambda1: 1.0,
            offsets: vec![4, 5],
            weighted: None,
            ellipse_threshold: ThresholdMode::Auto,
            hull_threshold: ThresholdMode::Auto,
            endpoint_limit: 2,
            min_arc_sep: "auto".into(),
            max_cuts: 10,
            connectivity: 8,
            polarity: Polarity::Auto,
            allow_convex_cuts: false,
        }
    }
}

/// Resolved pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub connectivity: Connectivity,
    pub polarity: Polarity,
    pub detect: DetectConfig,
    pub separator: SeparatorConfig,
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<Pipeline> {
        let estimator = match &self.weighted {
            Some(n) => Estimator::Weighted {
                n1: n[0],
                n2: n[1],
                weight_scale: 1.0,
            },
            None => Estimator::FixedOffsets {
                offsets: self.offsets.clone(),
            },
        };
        let min_arc_sep = match self.min_arc_sep.trim() {
            "auto" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| CliError(format!("--min-arc-sep: expected 'auto' or a count, got '{s}'")))?,
            ),
        };
        let detect = DetectConfig {
            ellipse_threshold: self.ellipse_threshold,
            hull_threshold: self.hull_threshold,
            endpoint_limit: self.endpoint_limit,
            ..DetectConfig::default()
        };
        detect.validate().map_err(|e| CliError(e.to_string()))?;
        let separator = SeparatorConfig {
            lambda: self.lambda,
            min_arc_sep,
            max_cuts: self.max_cuts,
            vamd: VamdConfig {
                estimator,
                lambda1: self.lambda1,
            },
            require_concave: !self.allow_convex_cuts,
        };
        separator.validate().map_err(|e| CliError(e.to_string()))?;
        let connectivity = match self.connectivity {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            c => return Err(CliError(format!("--connectivity must be 4 or 8, got {c}"))),
        };
        Ok(Pipeline {
            connectivity,
            polarity: self.polarity,
            detect,
            separator,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Input PBM/PGM images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Label map path (single input only); default `<stem>.labels.pgm`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Report path (single input only); default `<stem>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for default-named outputs; default is next to each input.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write the label map as plain-text P2.
    #[arg(long)]
    pub ascii: bool,
    /// Worker threads for multiple inputs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record stage timings in the report (output is then not byte-stable).
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Report path (single input only); default `<stem>.detect.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Base seed; scene `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `touch-pair`, `singles`, `pair-benchmark`, or a comma list of
    /// cluster kinds such as `touch,chain(3)`.
    #[arg(long, default_value = "touch-pair")]
    pub scenario: String,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Single chromosomes per scene; default tops scenes up to 40-46 objects.
    #[arg(long)]
    pub singles: Option<usize>,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 640)]
    pub height: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of `*.truth.json` sidecars and their images.
    #[arg(long)]
    pub truth_dir: PathBuf,
    /// Directory of `<stem>.labels.pgm` predictions; without it the
    /// pipeline is rerun on each scene image.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Minimum IoU for a matched chromosome.
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    /// Write the aggregated result as JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// A decoded input, thresholded if it was grayscale.
#[derive(Debug, Clone)]
pub struct LoadedInput {
    pub info: InputInfo,
    pub image: BinaryImage,
}

pub fn load_input(path: &Path, polarity: Polarity) -> Result<LoadedInput> {
    let bytes = fs::read(path).map_err(|e| CliError::at(path, e))?;
    let decoded = decode_image(&bytes).map_err(|e| CliError::at(path, e))?;
    let kind = String::from_utf8_lossy(&bytes[..2]).into_owned();
    let (image, otsu) = match decoded {
        DecodedImage::Binary(b) => (b, None),
        DecodedImage::Gray(g) => {
            let level = otsu_level(&g).map_err(|e| CliError::at(path, e))?;
            (
                otsu_threshold_with(&g, polarity).map_err(|e| CliError::at(path, e))?,
                Some(level),
            )
        }
    };
    let info = InputInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        kind,
        width: image.width(),
        height: image.height(),
        otsu_level: otsu,
    };
    Ok(LoadedInput { info, image })
}

fn regions_of(image: &BinaryImage, connectivity: Connectivity) -> Vec<Region> {
    extract_regions(&label_components(image, connectivity))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Output of segmenting one image.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub labels: LabelMap,
    pub report: RunReport,
}

impl Segmented {
    pub fn unresolved(&self) -> usize {
        self.report.totals.clusters_unresolved.unwrap_or(0)
    }
}

/// The full pipeline on an in-memory image.
pub fn segment_image(info: InputInfo, image: &BinaryImage, pipeline: &Pipeline) -> Result<Segmented> {
    let regions = regions_of(image, pipeline.connectivity);
    let forest = separate_all(&regions, &pipeline.detect, &pipeline.separator).map_err(|e| CliError(e.to_string()))?;
    let labels = forest
        .label_map(image.width(), image.height())
        .map_err(|e| CliError(e.to_string()))?;
    let config = ConfigSnapshot::new(
        pipeline.connectivity,
        pipeline.polarity,
        &pipeline.detect,
        &pipeline.separator,
    );
    Ok(Segmented {
        labels,
        report: RunReport::from_forest(info, config, &forest),
    })
}

pub fn segment_file(path: &Path, pipeline: &Pipeline, timings: bool) -> Result<Segmented> {
    let start = Instant::now();
    let input = load_input(path, pipeline.polarity)?;
    let load_ms = ms(start);
    let t_detect = Instant::now();
    let regions = regions_of(&input.image, pipeline.connectivity);
    // detection runs again inside separate_all; timed here on its own
    let detect_ms = if timings {
        detect_clusters(&regions, &pipeline.detect).map_err(|e| CliError::at(path, e))?;
        ms(t_detect)
    } else {
        0.0
    };
    let t_sep = Instant::now();
    let mut out = segment_image(input.info, &input.image, pipeline).map_err(|e| CliError::at(path, e))?;
    if timings {
        out.report = out.report.with_timings(Timings {
            load_ms,
            detect_ms,
            separate_ms: ms(t_sep),
            total_ms: ms(start),
        });
    }
    Ok(out)
}

pub fn detect_file(path: &Path, pipeline: &Pipeline, timings: bool) -> Result<RunReport> {
    let start = Instant::now();
    let input = load_input(path, pipeline.polarity)?;
    let load_ms = ms(start);
    let t = Instant::now();
    let regions = regions_of(&input.image, pipeline.connectivity);
    let detection = detect_clusters(&regions, &pipeline.detect).map_err(|e| CliError::at(path, e))?;
    let sizes: Vec<usize> = regions.iter().map(|r| r.len()).collect();
    let config = ConfigSnapshot::new(
        pipeline.connectivity,
        pipeline.polarity,
        &pipeline.detect,
        &pipeline.separator,
    );
    let mut report = RunReport::from_detection(input.info, config, &detection, &sizes);
    if timings {
        report = report.with_timings(Timings {
            load_ms,
            detect_ms: ms(t),
            separate_ms: 0.0,
            total_ms: ms(start),
        });
    }
    Ok(report)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn default_output(input: &Path, out_dir: Option<&Path>, suffix: &str) -> PathBuf {
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    dir.join(format!("{}{suffix}", stem(input)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::at(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError(format!("thread pool: {e}")))
}

fn single_only(inputs: &[PathBuf], flag: &str, set: bool) -> Result<()> {
    if set && inputs.len() > 1 {
        return Err(CliError(format!(
            "{flag} needs exactly one input; use --out-dir for several"
        )));
    }
    Ok(())
}

pub fn cmd_segment(args: &SegmentArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let run = || -> Result<Vec<Result<Segmented>>> {
        single_only(&args.inputs, "--output", args.output.is_some())?;
        single_only(&args.inputs, "--report", args.report.is_some())?;
        let pipeline = args.pipeline.resolve()?;
        let encoding = if args.ascii {
            PnmEncoding::Ascii
        } else {
            PnmEncoding::Raw
        };
        let results = pool(args.jobs)?.install(|| {
            args.inputs
                .par_iter()
                .map(|path| {
                    let seg = segment_file(path, &pipeline, args.timings)?;
                    let label_path = args
                        .output
                        .clone()
                        .unwrap_or_else(|| default_output(path, args.out_dir.as_deref(), ".labels.pgm"));
                    let report_path = args
                        .report
                        .clone()
                        .unwrap_or_else(|| default_output(path, args.out_dir.as_deref(), ".report.json"));
                    let bytes = encode_label_map(&seg.labels, encoding).map_err(|e| CliError::at(path, e))?;
                    write_file(&label_path, &bytes)?;
                    write_file(&report_path, seg.report.to_json().as_bytes())?;
                    Ok(seg)
                })
                .collect()
        });
        Ok(results)
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let mut code = EXIT_OK;
    for (path, r) in args.inputs.iter().zip(results) {
        match r {
            Ok(seg) => {
                let t = &seg.report.totals;
                let _ = writeln!(
                    out,
                    "{}: regions {} flagged {} resolved {} unresolved {} cuts {} labels {}",
                    path.display(),
                    t.regions,
                    t.clusters_flagged,
                    t.clusters_resolved.unwrap_or(0),
                    t.clusters_unresolved.unwrap_or(0),
                    t.cuts.unwrap_or(0),
                    t.output_labels.unwrap_or(0)
                );
                if seg.unresolved() > 0 && code == EXIT_OK {
                    code = EXIT_UNRESOLVED;
                }
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = EXIT_ERROR;
            }
        }
    }
    code
}

pub fn cmd_detect(args: &DetectArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let run = || -> Result<Vec<Result<RunReport>>> {
        single_only(&args.inputs, "--report", args.report.is_some())?;
        let pipeline = args.pipeline.resolve()?;
        Ok(pool(args.jobs)?.install(|| {
            args.inputs
                .par_iter()
                .map(|path| {
                    let report = detect_file(path, &pipeline, args.timings)?;
                    let report_path = args
                        .report
                        .clone()
                        .unwrap_or_else(|| default_output(path, args.out_dir.as_deref(), ".detect.json"));
                    write_file(&report_path, report.to_json().as_bytes())?;
                    Ok(report)
                })
                .collect()
        }))
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let mut code = EXIT_OK;
    for (path, r) in args.inputs.iter().zip(results) {
        match r {
            Ok(report) => {
                let t = &report.totals;
                let _ = writeln!(
                    out,
                    "{}: regions {} flagged {} skeleton_calls {}",
                    path.display(),
                    t.regions,
                    t.clusters_flagged,
                    t.skeleton_calls
                );
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = EXIT_ERROR;
            }
        }
    }
    code
}

/// Scene parameters for scene `index` of a synth scenario.
pub fn scenario_params(scenario: &str, index: usize, seed: u64, singles: Option<usize>) -> Result<SceneParams> {
    let name = scenario.trim().to_ascii_lowercase();
    let top_up = |clusters: Vec<ClusterKind>| {
        let mut p = benchmark_scene_params(seed, clusters);
        if let Some(n) = singles {
            p.n_singles = n;
        }
        p
    };
    Ok(match name.as_str() {
        "touch-pair" | "touch_pair" => SceneParams::new(singles.unwrap_or(0), vec![ClusterKind::Touch]),
        "singles" => SceneParams::new(singles.unwrap_or(44), Vec::new()),
        "pair-benchmark" | "pair_benchmark" => {
            let kinds = pair_benchmark_kinds();
            let i = (index % (kinds.len() / 4)) * 4;
            top_up(kinds[i..i + 4].to_vec())
        }
        _ => {
            let kinds = name
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<ClusterKind>().map_err(CliError))
                .collect::<Result<Vec<_>>>()?;
            if kinds.is_empty() {
                return Err(CliError(format!("empty scenario '{scenario}'")));
            }
            top_up(kinds)
        }
    })
}

pub fn scene_file_stem(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let run = || -> Result<usize> {
        fs::create_dir_all(&args.out_dir).map_err(|e| CliError::at(&args.out_dir, e))?;
        for i in 0..args.count {
            let seed = args.seed.wrapping_add(i as u64);
            let mut params = scenario_params(&args.scenario, i, seed, args.singles)?;
            params.width = args.width;
            params.height = args.height;
            let truth = gen_scene(seed, &params).map_err(|e| CliError(format!("scene {i}: {e}")))?;
            let stem = scene_file_stem(i);
            let image_name = format!("{stem}.pbm");
            write_file(
                &args.out_dir.join(&image_name),
                &encode_pbm(&truth.image, PnmEncoding::Raw),
            )?;
            let sidecar = TruthSidecar::from_truth(&truth, &image_name);
            let json = serde_json::to_string(&sidecar).map_err(|e| CliError(e.to_string()))? + "\n";
            write_file(&args.out_dir.join(format!("{stem}.truth.json")), json.as_bytes())?;
        }
        Ok(args.count)
    };
    match run() {
        Ok(n) => {
            let _ = writeln!(out, "wrote {n} scene(s) to {}", args.out_dir.display());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Reads a sidecar and the image it names.
pub fn load_truth(sidecar_path: &Path) -> Result<SceneTruth> {
    let text = fs::read_to_string(sidecar_path).map_err(|e| CliError::at(sidecar_path, e))?;
    let sidecar: TruthSidecar = serde_json::from_str(&text).map_err(|e| CliError::at(sidecar_path, e))?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let image_path = dir.join(&sidecar.image);
    let bytes = fs::read(&image_path).map_err(|e| CliError::at(&image_path, e))?;
    let image = match decode_image(&bytes).map_err(|e| CliError::at(&image_path, e))? {
        DecodedImage::Binary(b) => b,
        DecodedImage::Gray(_) => return Err(CliError::at(&image_path, "scene image must be a PBM")),
    };
    if image.width() != sidecar.width || image.height() != sidecar.height {
        return Err(CliError::at(&image_path, "image size differs from its truth sidecar"));
    }
    Ok(sidecar.into_truth(image))
}

/// Truth sidecars in `dir`, sorted by name.
pub fn truth_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".truth.json"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
struct KindSummary {
    kind: String,
    clusters: usize,
    detected: usize,
    successes: usize,
}

#[derive(Debug, Clone, Serialize)]
struct EvalSummary {
    scenes: usize,
    iou_threshold: f64,
    clusters: usize,
    clusters_detected: usize,
    flagged: usize,
    flagged_true: usize,
    precision: f64,
    recall: f64,
    separation_successes: usize,
    success_rate: f64,
    by_kind: Vec<KindSummary>,
}

fn summarize(scenes: usize, iou: f64, r: &EvalResult) -> EvalSummary {
    let mut by_kind: Vec<KindSummary> = Vec::new();
    for m in &r.matches {
        let name = m.kind.name();
        let idx = match by_kind.iter().position(|k| k.kind == name) {
            Some(i) => i,
            None => {
                by_kind.push(KindSummary {
                    kind: name,
                    clusters: 0,
                    detected: 0,
                    successes: 0,
                });
                by_kind.len() - 1
            }
        };
        let k = &mut by_kind[idx];
        k.clusters += 1;
        k.detected += m.detected as usize;
        k.successes += m.success as usize;
    }
    by_kind.sort_by(|a, b| a.kind.cmp(&b.kind));
    EvalSummary {
        scenes,
        iou_threshold: sig6(iou),
        clusters: r.clusters,
        clusters_detected: r.clusters_detected,
        flagged: r.flagged,
        flagged_true: r.flagged_true,
        precision: sig6(r.precision),
        recall: sig6(r.recall),
        separation_successes: r.separation_successes,
        success_rate: sig6(r.success_rate),
        by_kind,
    }
}

/// Evaluates one scene, rerunning the pipeline or reading a prediction.
pub fn eval_scene(truth: &SceneTruth, pred: Option<&Path>, pipeline: &Pipeline, iou: f64) -> Result<EvalResult> {
    match pred {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::at(path, e))?;
            let map = match decode_image(&bytes).map_err(|e| CliError::at(path, e))? {
                DecodedImage::Gray(g) => LabelMap::from_gray(&g),
                DecodedImage::Binary(_) => return Err(CliError::at(path, "prediction must be a PGM label map")),
            };
            if map.width() != truth.image.width() || map.height() != truth.image.height() {
                return Err(CliError::at(path, "prediction size differs from the scene"));
            }
            Ok(evaluate_labels(&map, truth, iou))
        }
        None => {
            let regions = regions_of(&truth.image, pipeline.connectivity);
            let forest =
                separate_all(&regions, &pipeline.detect, &pipeline.separator).map_err(|e| CliError(e.to_string()))?;
            Ok(evaluate(&forest, truth, iou))
        }
    }
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let run = || -> Result<(usize, EvalResult)> {
        if !(args.iou > 0.0 && args.iou <= 1.0) {
            return Err(CliError(format!("--iou must lie in (0, 1], got {}", args.iou)));
        }
        let pipeline = args.pipeline.resolve()?;
        let files = truth_files(&args.truth_dir)?;
        if files.is_empty() {
            return Err(CliError("no scenes".into()));
        }
        let results: Vec<Result<EvalResult>> = pool(args.jobs)?.install(|| {
            files
                .par_iter()
                .map(|f| {
                    let truth = load_truth(f)?;
                    let name = f
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let scene_stem = name.trim_end_matches(".truth.json");
                    let pred = match &args.pred_dir {
                        Some(dir) => {
                            let p = dir.join(format!("{scene_stem}.labels.pgm"));
                            if !p.exists() {
                                return Err(CliError(format!("no prediction {} for {}", p.display(), f.display())));
                            }
                            Some(p)
                        }
                        None => None,
                    };
                    eval_scene(&truth, pred.as_deref(), &pipeline, args.iou)
                })
                .collect()
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        Ok((files.len(), EvalResult::merge(&results)))
    };
    match run() {
        Ok((scenes, result)) => {
            let summary = summarize(scenes, args.iou, &result);
            let _ = writeln!(
                out,
                "scenes {} clusters {} precision {:.4} recall {:.4} success {}/{} rate {:.4}",
                scenes,
                result.clusters,
                result.precision,
                result.recall,
                result.separation_successes,
                result.clusters,
                result.success_rate
            );
            for k in &summary.by_kind {
                let _ = writeln!(
                    out,
                    "  {}: {}/{} separated, {} detected",
                    k.kind, k.successes, k.clusters, k.detected
                );
            }
            if let Some(path) = &args.output {
                let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
                if let Err(e) = write_file(path, json.as_bytes()) {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_ERROR;
                }
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Parses `args` and runs the chosen command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_ERROR;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match &cli.command {
        Command::Segment(a) => cmd_segment(a, out, err),
        Command::Detect(a) => cmd_detect(a, out, err),
        Command::Synth(a) => cmd_synth(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
    }
}
