//! Python bindings for chromoseg.
//!
//! Images cross the boundary as row lists (anything iterable of rows of
//! ints or bools, including 2-D numpy arrays); pixel sets as `(x, y)` lists.

use chromoseg::cli::{segment_image, Pipeline};
use chromoseg::detect::{detect_clusters, ellipse_ratio, hull_ratio, DetectConfig, ThresholdMode};
use chromoseg::geometry::{count_endpoints, skeletonize};
use chromoseg::raster::{
    decode_image, encode_pbm, extract_regions, label_components, BinaryImage, Connectivity, DecodedImage, LabelMap,
    PnmEncoding, Point, Polarity, Region,
};
use chromoseg::report::{sha256_hex, ConfigSnapshot, InputInfo, RunReport};
use chromoseg::synth::{gen_scene, ClusterKind, SceneParams, TruthSidecar};
use chromoseg::SeparatorConfig;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn image_from_rows(rows: Vec<Vec<i64>>) -> PyResult<BinaryImage> {
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    let pixels = rows.into_iter().flatten().map(|v| v != 0).collect();
    BinaryImage::from_pixels(width, height, pixels).map_err(value_err)
}

fn image_rows(img: &BinaryImage) -> Vec<Vec<u8>> {
    img.pixels()
        .chunks(img.width().max(1))
        .map(|r| r.iter().map(|&b| b as u8).collect())
        .collect()
}

fn label_rows(map: &LabelMap) -> Vec<Vec<u32>> {
    map.labels().chunks(map.width().max(1)).map(|r| r.to_vec()).collect()
}

fn region_from(pixels: Vec<(i32, i32)>) -> PyResult<Region> {
    Region::from_pixels(1, pixels.into_iter().map(|(x, y)| Point::new(x, y)).collect()).map_err(value_err)
}

fn connectivity(c: u8) -> PyResult<Connectivity> {
    match c {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        _ => Err(PyValueError::new_err(format!("connectivity must be 4 or 8, got {c}"))),
    }
}

fn threshold(v: Option<f64>) -> ThresholdMode {
    v.map_or(ThresholdMode::Auto, ThresholdMode::Fixed)
}

fn array_info(img: &BinaryImage) -> InputInfo {
    InputInfo {
        path: "<array>".into(),
        sha256: sha256_hex(&encode_pbm(img, PnmEncoding::Raw)),
        kind: "P4".into(),
        width: img.width(),
        height: img.height(),
        otsu_level: None,
    }
}

/// Detection verdict for one connected region.
#[pyclass(name = "RegionReport", get_all, frozen)]
struct PyRegionReport {
    label: u32,
    hull_ratio: f64,
    ellipse_ratio: f64,
    endpoint_count: Option<usize>,
    is_cluster: bool,
    eliminated_by: Option<String>,
}

#[pymethods]
impl PyRegionReport {
    fn __repr__(&self) -> String {
        format!(
            "RegionReport(label={}, is_cluster={}, hull_ratio={:.4}, ellipse_ratio={:.4})",
            self.label,
            if self.is_cluster { "True" } else { "False" },
            self.hull_ratio,
            self.ellipse_ratio
        )
    }
}

#[pyclass(name = "Segmentation", get_all, frozen)]
struct PySegmentation {
    /// Label map rows; 0 is background, each final chromosome has its own label.
    labels: Vec<Vec<u32>>,
    label_count: usize,
    clusters_flagged: usize,
    clusters_unresolved: usize,
    cuts: usize,
    /// The same JSON report the command line writes.
    report_json: String,
}

#[pymethods]
impl PySegmentation {
    fn __repr__(&self) -> String {
        format!(
            "Segmentation(labels={}, flagged={}, unresolved={}, cuts={})",
            self.label_count, self.clusters_flagged, self.clusters_unresolved, self.cuts
        )
    }
}

/// Finds and separates chromosome clusters in a binary image.
#[pyfunction]
#[pyo3(signature = (image, *, lambda_=1000.0, lambda1=1.0, max_cuts=10, connectivity=8, hull_threshold=None, ellipse_threshold=None, allow_convex_cuts=false))]
#[allow(clippy::too_many_arguments)]
fn segment(
    py: Python<'_>,
    image: Vec<Vec<i64>>,
    lambda_: f64,
    lambda1: f64,
    max_cuts: usize,
    connectivity: u8,
    hull_threshold: Option<f64>,
    ellipse_threshold: Option<f64>,
    allow_convex_cuts: bool,
) -> PyResult<PySegmentation> {
    let img = image_from_rows(image)?;
    let mut separator = SeparatorConfig {
        lambda: lambda_,
        max_cuts,
        require_concave: !allow_convex_cuts,
        ..Default::default()
    };
    separator.vamd.lambda1 = lambda1;
    let pipeline = Pipeline {
        connectivity: self::connectivity(connectivity)?,
        polarity: Polarity::Auto,
        detect: DetectConfig {
            hull_threshold: threshold(hull_threshold),
            ellipse_threshold: threshold(ellipse_threshold),
            ..Default::default()
        },
        separator,
    };
    let out = py
        .detach(|| segment_image(array_info(&img), &img, &pipeline))
        .map_err(value_err)?;
    let t = &out.report.totals;
    Ok(PySegmentation {
        labels: label_rows(&out.labels),
        label_count: out.labels.label_count(),
        clusters_flagged: t.clusters_flagged,
        clusters_unresolved: t.clusters_unresolved.unwrap_or(0),
        cuts: t.cuts.unwrap_or(0),
        report_json: out.report.to_json(),
    })
}

/// Runs the detection cascade only.
#[pyfunction]
#[pyo3(signature = (image, *, connectivity=8, hull_threshold=None, ellipse_threshold=None))]
fn detect(
    image: Vec<Vec<i64>>,
    connectivity: u8,
    hull_threshold: Option<f64>,
    ellipse_threshold: Option<f64>,
) -> PyResult<Vec<PyRegionReport>> {
    let img = image_from_rows(image)?;
    let regions = extract_regions(&label_components(&img, self::connectivity(connectivity)?));
    let cfg = DetectConfig {
        hull_threshold: threshold(hull_threshold),
        ellipse_threshold: threshold(ellipse_threshold),
        ..Default::default()
    };
    let det = detect_clusters(&regions, &cfg).map_err(value_err)?;
    Ok(det
        .reports
        .into_iter()
        .map(|r| PyRegionReport {
            label: r.label,
            hull_ratio: r.hull_ratio,
            ellipse_ratio: r.ellipse_ratio,
            endpoint_count: r.endpoint_count,
            is_cluster: r.is_cluster,
            eliminated_by: r.eliminated_by.map(|s| format!("{s:?}").to_lowercase()),
        })
        .collect())
}

/// Region pixels over lattice points of their convex hull.
#[pyfunction(name = "hull_ratio")]
fn py_hull_ratio(pixels: Vec<(i32, i32)>) -> PyResult<f64> {
    Ok(hull_ratio(&region_from(pixels)?))
}

/// Minor over major axis of the minimum enclosing ellipse.
#[pyfunction(name = "ellipse_ratio")]
#[pyo3(signature = (pixels, tol=1e-6))]
fn py_ellipse_ratio(pixels: Vec<(i32, i32)>, tol: f64) -> PyResult<f64> {
    Ok(ellipse_ratio(&region_from(pixels)?, tol))
}

/// Skeleton endpoints after thinning.
#[pyfunction]
fn endpoint_count(pixels: Vec<(i32, i32)>) -> PyResult<usize> {
    Ok(count_endpoints(&skeletonize(&region_from(pixels)?)))
}

/// Generates a synthetic scene. Returns `(image_rows, truth_json)`.
#[pyfunction]
#[pyo3(signature = (seed, clusters, *, singles=0, width=640, height=640))]
fn synth_scene(
    seed: u64,
    clusters: Vec<String>,
    singles: usize,
    width: usize,
    height: usize,
) -> PyResult<(Vec<Vec<u8>>, String)> {
    let kinds = clusters
        .iter()
        .map(|s| s.parse::<ClusterKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let mut params = SceneParams::new(singles, kinds);
    params.width = width;
    params.height = height;
    let truth = gen_scene(seed, &params).map_err(value_err)?;
    let sidecar = serde_json::to_string(&TruthSidecar::from_truth(&truth, "<array>")).map_err(value_err)?;
    Ok((image_rows(&truth.image), sidecar))
}

/// Decodes PBM or PGM bytes; grayscale comes back as levels 0-255.
#[pyfunction]
fn decode_pnm(data: &[u8]) -> PyResult<Vec<Vec<u8>>> {
    match decode_image(data).map_err(value_err)? {
        DecodedImage::Binary(img) => Ok(image_rows(&img)),
        DecodedImage::Gray(g) => Ok(g.pixels().chunks(g.width().max(1)).map(|r| r.to_vec()).collect()),
    }
}

/// Encodes a binary image as raw PBM.
#[pyfunction]
fn encode_pbm_bytes<'py>(py: Python<'py>, image: Vec<Vec<i64>>) -> PyResult<Bound<'py, PyBytes>> {
    let img = image_from_rows(image)?;
    Ok(PyBytes::new(py, &encode_pbm(&img, PnmEncoding::Raw)))
}

/// Report JSON for detection only, as the `detect` command writes it.
#[pyfunction]
fn detect_report(image: Vec<Vec<i64>>) -> PyResult<String> {
    let img = image_from_rows(image)?;
    let regions = extract_regions(&label_components(&img, Connectivity::Eight));
    let cfg = DetectConfig::default();
    let sep = SeparatorConfig::default();
    let det = detect_clusters(&regions, &cfg).map_err(value_err)?;
    let sizes: Vec<usize> = regions.iter().map(|r| r.len()).collect();
    let config = ConfigSnapshot::new(Connectivity::Eight, Polarity::Auto, &cfg, &sep);
    Ok(RunReport::from_detection(array_info(&img), config, &det, &sizes).to_json())
}

#[pymodule]
fn chromoseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegionReport>()?;
    m.add_class::<PySegmentation>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(detect_report, m)?)?;
    m.add_function(wrap_pyfunction!(py_hull_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(py_ellipse_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(endpoint_count, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(decode_pnm, m)?)?;
    m.add_function(wrap_pyfunction!(encode_pbm_bytes, m)?)?;
    Ok(())
}
