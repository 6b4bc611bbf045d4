//! Machine-readable run reports.
//!
//! Reports are JSON with a fixed key order. Every float is rounded to six
//! significant digits so that identical runs give identical bytes. Timings
//! are only included on request since they break that property.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cutline::{Estimator, NodeKind, SeparationForest, SeparatorConfig};
use crate::detect::{CriteriaReport, DetectConfig, Detection, Stage, ThresholdMode, ThresholdSource, Thresholds};
use crate::raster::{Connectivity, Polarity};

pub const REPORT_FORMAT: &str = "chromoseg-report/1";

/// Rounds to six significant digits.
pub fn sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    /// Netpbm kind of the input, e.g. `P1`.
    pub kind: String,
    pub width: usize,
    pub height: usize,
    /// Otsu level used when the input was grayscale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otsu_level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSnapshot {
    pub connectivity: u8,
    pub polarity: String,
    pub ellipse_threshold: String,
    pub hull_threshold: String,
    pub endpoint_limit: usize,
    pub lambda: f64,
    pub lambda1: f64,
    pub estimator: String,
    pub min_arc_sep: String,
    pub max_cuts: usize,
    pub require_concave: bool,
}

fn mode_string(m: ThresholdMode) -> String {
    match m {
        ThresholdMode::Auto => "auto".into(),
        ThresholdMode::Fixed(v) => format!("{}", sig6(v)),
    }
}

impl ConfigSnapshot {
    pub fn new(connectivity: Connectivity, polarity: Polarity, detect: &DetectConfig, sep: &SeparatorConfig) -> Self {
        let estimator = match &sep.vamd.estimator {
            Estimator::FixedOffsets { offsets } => {
                let list: Vec<String> = offsets.iter().map(|o| o.to_string()).collect();
                format!("offsets:{}", list.join(","))
            }
            Estimator::Weighted { n1, n2, weight_scale } => format!("weighted:{n1},{n2},{}", sig6(*weight_scale)),
        };
        Self {
            connectivity: match connectivity {
                Connectivity::Four => 4,
                Connectivity::Eight => 8,
            },
            polarity: format!("{polarity:?}").to_ascii_lowercase(),
            ellipse_threshold: mode_string(detect.ellipse_threshold),
            hull_threshold: mode_string(detect.hull_threshold),
            endpoint_limit: detect.endpoint_limit,
            lambda: sig6(sep.lambda),
            lambda1: sig6(sep.vamd.lambda1),
            estimator,
            min_arc_sep: sep.min_arc_sep.map_or("auto".into(), |v| v.to_string()),
            max_cuts: sep.max_cuts,
            require_concave: sep.require_concave,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEntry {
    pub hull: f64,
    pub hull_source: ThresholdSource,
    pub ellipse: f64,
    pub ellipse_source: ThresholdSource,
    pub endpoint_limit: usize,
}

impl From<&Thresholds> for ThresholdEntry {
    fn from(t: &Thresholds) -> Self {
        Self {
            hull: sig6(t.hull),
            hull_source: t.hull_source,
            ellipse: sig6(t.ellipse),
            ellipse_source: t.ellipse_source,
            endpoint_limit: t.endpoint_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionEntry {
    pub label: u32,
    pub pixels: usize,
    pub hull_ratio: f64,
    pub ellipse_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_count: Option<usize>,
    pub is_cluster: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eliminated_by: Option<Stage>,
}

impl RegionEntry {
    fn new(r: &CriteriaReport, pixels: usize) -> Self {
        Self {
            label: r.label,
            pixels,
            hull_ratio: sig6(r.hull_ratio),
            ellipse_ratio: sig6(r.ellipse_ratio),
            endpoint_count: r.endpoint_count,
            is_cluster: r.is_cluster,
            eliminated_by: r.eliminated_by,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEntry {
    pub id: usize,
    pub depth: usize,
    pub pixels: usize,
    /// `leaf`, `cut` or `unresolved`.
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<[[i32; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thickened: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fragmented: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub children: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterEntry {
    pub label: u32,
    /// `resolved` or `unresolved`.
    pub status: &'static str,
    pub cuts: usize,
    pub depth: usize,
    pub leaves: usize,
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Totals {
    pub regions: usize,
    pub skeleton_calls: usize,
    pub clusters_flagged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters_resolved: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters_unresolved: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cuts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_labels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timings {
    pub load_ms: f64,
    pub detect_ms: f64,
    pub separate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format: &'static str,
    pub input: InputInfo,
    pub config: ConfigSnapshot,
    pub thresholds: ThresholdEntry,
    pub regions: Vec<RegionEntry>,
    /// Absent for detection-only runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<ClusterEntry>>,
    pub totals: Totals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

fn stage_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl RunReport {
    pub fn from_forest(input: InputInfo, config: ConfigSnapshot, forest: &SeparationForest) -> Self {
        let regions: Vec<RegionEntry> = forest
            .reports
            .iter()
            .zip(&forest.trees)
            .map(|(r, t)| RegionEntry::new(r, t.root().len()))
            .collect();
        let mut clusters = Vec::new();
        for (report, tree) in forest.reports.iter().zip(&forest.trees) {
            if !report.is_cluster {
                continue;
            }
            let nodes = tree
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| {
                    let mut e = NodeEntry {
                        id,
                        depth: n.depth,
                        pixels: n.region.len(),
                        kind: "leaf",
                        segment: None,
                        costs: None,
                        candidates: None,
                        boundary_len: None,
                        thickened: None,
                        fragmented: None,
                        children: None,
                        stage: None,
                        error: None,
                    };
                    match &n.kind {
                        NodeKind::Leaf => {}
                        NodeKind::Cut { split, children } => {
                            e.kind = "cut";
                            let (p, q) = split.segment;
                            e.segment = Some([[p.x, p.y], [q.x, q.y]]);
                            e.costs = Some([sig6(split.costs.0), sig6(split.costs.1)]);
                            e.candidates = Some(split.m);
                            e.boundary_len = Some(split.boundary_len);
                            e.thickened = Some(split.thickened);
                            e.fragmented = Some(split.fragmented);
                            e.children = Some(*children);
                        }
                        NodeKind::Unresolved(u) => {
                            e.kind = "unresolved";
                            e.stage = Some(stage_name(&u.stage));
                            e.error = Some(u.error.to_string());
                        }
                    }
                    e
                })
                .collect();
            clusters.push(ClusterEntry {
                label: report.label,
                status: if tree.is_resolved() { "resolved" } else { "unresolved" },
                cuts: tree.cut_count(),
                depth: tree.max_depth(),
                leaves: tree.leaves().len(),
                nodes,
            });
        }
        let flagged = forest.clusters_flagged();
        let unresolved = forest.clusters_unresolved();
        let totals = Totals {
            regions: regions.len(),
            skeleton_calls: forest.reports.iter().filter(|r| r.endpoint_count.is_some()).count(),
            clusters_flagged: flagged,
            clusters_resolved: Some(flagged - unresolved),
            clusters_unresolved: Some(unresolved),
            cuts: Some(forest.total_cuts()),
            output_labels: Some(forest.trees.iter().map(|t| t.leaves().len()).sum()),
        };
        Self {
            format: REPORT_FORMAT,
            input,
            config,
            thresholds: (&forest.thresholds).into(),
            regions,
            clusters: Some(clusters),
            totals,
            timings: None,
        }
    }

    /// `sizes` gives the pixel count of each region, in label order.
    pub fn from_detection(input: InputInfo, config: ConfigSnapshot, detection: &Detection, sizes: &[usize]) -> Self {
        let regions: Vec<RegionEntry> = detection
            .reports
            .iter()
            .zip(sizes)
            .map(|(r, &n)| RegionEntry::new(r, n))
            .collect();
        let totals = Totals {
            regions: regions.len(),
            skeleton_calls: detection.skeleton_calls(),
            clusters_flagged: detection.reports.iter().filter(|r| r.is_cluster).count(),
            clusters_resolved: None,
            clusters_unresolved: None,
            cuts: None,
            output_labels: None,
        };
        Self {
            format: REPORT_FORMAT,
            input,
            config,
            thresholds: (&detection.thresholds).into(),
            regions,
            clusters: None,
            totals,
            timings: None,
        }
    }

    pub fn with_timings(mut self, t: Timings) -> Self {
        self.timings = Some(Timings {
            load_ms: sig6(t.load_ms),
            detect_ms: sig6(t.detect_ms),
            separate_ms: sig6(t.separate_ms),
            total_ms: sig6(t.total_ms),
        });
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
