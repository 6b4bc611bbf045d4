//! Three-criterion cascade deciding which regions are chromosome clusters.
//!
//! Regions go through the convex-hull test first (it removes small, round
//! single chromosomes that the ellipse test would keep), then the
//! enclosing-ellipse test, and only the survivors of both are skeletonized,
//! since thinning is by far the most expensive stage. A region is a cluster
//! when it survives all three.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{convex_hull, count_endpoints, hull_pixel_count, min_enclosing_ellipse, skeletonize};
use crate::raster::Region;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("{name} threshold must lie in (0, 1), got {value}")]
    ThresholdRange { name: &'static str, value: f64 },
    #[error("endpoint limit must be at least 2, got {0}")]
    EndpointLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Mean of the ratio over every region of the scene.
    #[default]
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ThresholdMode::Auto);
        }
        s.parse::<f64>()
            .map(ThresholdMode::Fixed)
            .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub ellipse_threshold: ThresholdMode,
    pub hull_threshold: ThresholdMode,
    /// Below this many regions the scene mean is not trusted and the
    /// fallback thresholds are used.
    pub min_components_for_auto: usize,
    pub fallback_ellipse_threshold: f64,
    pub fallback_hull_threshold: f64,
    pub endpoint_limit: usize,
    pub ellipse_tol: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            ellipse_threshold: ThresholdMode::Auto,
            hull_threshold: ThresholdMode::Auto,
            min_components_for_auto: 4,
            fallback_ellipse_threshold: 0.5,
            fallback_hull_threshold: 0.85,
            endpoint_limit: 2,
            ellipse_tol: 1e-6,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        for (name, mode, fallback) in [
            ("ellipse", self.ellipse_threshold, self.fallback_ellipse_threshold),
            ("hull", self.hull_threshold, self.fallback_hull_threshold),
        ] {
            if let ThresholdMode::Fixed(v) = mode {
                if !in_unit(v) {
                    return Err(DetectError::ThresholdRange { name, value: v });
                }
            }
            if !in_unit(fallback) {
                return Err(DetectError::ThresholdRange { name, value: fallback });
            }
        }
        if self.endpoint_limit < 2 {
            return Err(DetectError::EndpointLimit(self.endpoint_limit));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Auto,
    Fixed,
    Fallback,
}

/// Thresholds in force for a scene. Frozen after the first pass and reused
/// when pieces of a cut cluster are re-tested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hull: f64,
    pub hull_source: ThresholdSource,
    pub ellipse: f64,
    pub ellipse_source: ThresholdSource,
    pub endpoint_limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hull,
    Ellipse,
    Skeleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub label: u32,
    pub ellipse_ratio: f64,
    pub hull_ratio: f64,
    /// Present only when the skeleton stage ran.
    pub endpoint_count: Option<usize>,
    pub is_cluster: bool,
    pub eliminated_by: Option<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub keep: bool,
    pub value: f64,
}

/// Region pixels over lattice points in the region's convex hull.
pub fn hull_ratio(region: &Region) -> f64 {
    let hull = convex_hull(region.pixels());
    region.len() as f64 / hull_pixel_count(&hull, region.bbox()) as f64
}

/// Minor over major semi-axis of the minimum-area enclosing ellipse.
pub fn ellipse_ratio(region: &Region, tol: f64) -> f64 {
    min_enclosing_ellipse(region.pixels(), tol)
        .expect("regions are non-empty and tol is validated")
        .axis_ratio
}

/// Keeps the region as a cluster candidate when its ellipse is round
/// enough (`ratio >= threshold`).
pub fn ellipse_criterion(region: &Region, threshold: f64) -> Outcome {
    let value = ellipse_ratio(region, DetectConfig::default().ellipse_tol);
    Outcome {
        keep: value >= threshold,
        value,
    }
}

/// Eliminates the region as a single chromosome when it nearly fills its
/// hull (`ratio > threshold`).
pub fn hull_criterion(region: &Region, threshold: f64) -> Outcome {
    let value = hull_ratio(region);
    Outcome {
        keep: value <= threshold,
        value,
    }
}

/// Keeps the region as a cluster when its skeleton has more than
/// `endpoint_limit` endpoints.
pub fn skeleton_criterion(region: &Region, endpoint_limit: usize) -> (bool, usize) {
    let count = count_endpoints(&skeletonize(region));
    (count > endpoint_limit, count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMetrics {
    pub hull_ratio: f64,
    pub ellipse_ratio: f64,
}

pub fn region_metrics(region: &Region, tol: f64) -> RegionMetrics {
    RegionMetrics {
        hull_ratio: hull_ratio(region),
        ellipse_ratio: ellipse_ratio(region, tol),
    }
}

/// Resolves auto thresholds as means over all regions, computed before any
/// elimination so the result does not depend on region order.
pub fn compute_thresholds(metrics: &[RegionMetrics], cfg: &DetectConfig) -> Thresholds {
    let enough = metrics.len() >= cfg.min_components_for_auto && !metrics.is_empty();
    let resolve = |mode: ThresholdMode, fallback: f64, pick: fn(&RegionMetrics) -> f64| match mode {
        ThresholdMode::Fixed(v) => (v, ThresholdSource::Fixed),
        ThresholdMode::Auto if enough => {
            // sum in a fixed order of values so permutations give equal bits
            let mut values: Vec<f64> = metrics.iter().map(pick).collect();
            values.sort_by(f64::total_cmp);
            (values.iter().sum::<f64>() / values.len() as f64, ThresholdSource::Auto)
        }
        ThresholdMode::Auto => (fallback, ThresholdSource::Fallback),
    };
    let (hull, hull_source) = resolve(cfg.hull_threshold, cfg.fallback_hull_threshold, |m| m.hull_ratio);
    let (ellipse, ellipse_source) = resolve(cfg.ellipse_threshold, cfg.fallback_ellipse_threshold, |m| {
        m.ellipse_ratio
    });
    Thresholds {
        hull,
        hull_source,
        ellipse,
        ellipse_source,
        endpoint_limit: cfg.endpoint_limit,
    }
}

/// Runs the cascade on one region with known metrics.
pub fn classify(region: &Region, metrics: RegionMetrics, t: &Thresholds) -> CriteriaReport {
    let mut report = CriteriaReport {
        label: region.label(),
        ellipse_ratio: metrics.ellipse_ratio,
        hull_ratio: metrics.hull_ratio,
        endpoint_count: None,
        is_cluster: false,
        eliminated_by: None,
    };
    if metrics.hull_ratio > t.hull {
        report.eliminated_by = Some(Stage::Hull);
    } else if metrics.ellipse_ratio < t.ellipse {
        report.eliminated_by = Some(Stage::Ellipse);
    } else {
        let (keep, count) = skeleton_criterion(region, t.endpoint_limit);
        report.endpoint_count = Some(count);
        if keep {
            report.is_cluster = true;
        } else {
            report.eliminated_by = Some(Stage::Skeleton);
        }
    }
    report
}

/// Re-tests a region against frozen scene thresholds.
pub fn classify_region(region: &Region, t: &Thresholds, tol: f64) -> CriteriaReport {
    classify(region, region_metrics(region, tol), t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub thresholds: Thresholds,
    /// One report per input region, ordered by label.
    pub reports: Vec<CriteriaReport>,
}

impl Detection {
    /// Number of regions the skeleton stage was run on.
    pub fn skeleton_calls(&self) -> usize {
        self.reports.iter().filter(|r| r.endpoint_count.is_some()).count()
    }

    pub fn cluster_labels(&self) -> Vec<u32> {
        self.reports.iter().filter(|r| r.is_cluster).map(|r| r.label).collect()
    }
}

pub fn detect_clusters(regions: &[Region], cfg: &DetectConfig) -> Result<Detection, DetectError> {
    cfg.validate()?;
    let metrics: Vec<RegionMetrics> = regions.iter().map(|r| region_metrics(r, cfg.ellipse_tol)).collect();
    let thresholds = compute_thresholds(&metrics, cfg);
    let mut reports: Vec<CriteriaReport> = regions
        .iter()
        .zip(&metrics)
        .map(|(r, &m)| classify(r, m, &thresholds))
        .collect();
    reports.sort_by_key(|r| r.label);
    Ok(Detection { thresholds, reports })
}
