//! Geometric detection and separation of touching or partially overlapping
//! chromosome clusters in binary metaphase images.
//!
//! The pipeline has two phases. [`detect`] runs a three-criterion cascade
//! (convex hull ratio, enclosing-ellipse axis ratio, skeleton endpoints) over
//! every labeled region to decide which regions are clusters. [`cutline`]
//! then finds two cross-points on each cluster's boundary from the angle
//! variation along the contour and the sum of distances among candidates,
//! cuts along the segment joining them, and repeats on the pieces until every
//! piece tests as a single chromosome.
//!
//! [`raster`] holds the pixel-grid types and Netpbm I/O, [`geometry`] the
//! shared discrete-geometry kernels, [`synth`] a seeded generator of scenes
//! with ground truth, and [`cli`] the command-line front end.

pub mod cli;
pub mod cutline;
pub mod detect;
pub mod geometry;
pub mod raster;
pub mod report;

pub mod synth;

pub use cutline::{separate_all, separate_cluster, SeparationForest, SeparationTree, SeparatorConfig, VamdConfig};
pub use detect::{detect_clusters, CriteriaReport, DetectConfig, Thresholds};
pub use geometry::{Boundary, EllipseFit, Hull, SkeletonInfo};
pub use raster::{BinaryImage, GrayImage, LabelMap, Point, Region};
