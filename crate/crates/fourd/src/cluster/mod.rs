//! Instance candidates from joint spatial, image-plane and motion
//! coordinates.
//!
//! Each preprocessed point becomes an 8-dimensional feature vector
//! `(u*su, v*su, x, y, z, fx*sf, fy*sf, fz*sf)`: its pixel coordinates
//! scaled into meters, its 3D position, and its scene flow scaled up so
//! that motion differences of a few centimeters per frame can separate
//! nearby objects. Density clustering over these features yields segments;
//! a segment whose points mostly move faster than `sigma` is labeled
//! moving foreground.

pub mod hdbscan;

pub use hdbscan::{hdbscan, HdbscanParams, Labeling};

use crate::geom::{project_to_image, Calibration, PointCloud};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("segment {id} is empty")]
    EmptySegment { id: u32 },
    #[error("segment id {id} is not unique or is zero")]
    BadSegmentId { id: u32 },
    #[error("segment {id} index {index} out of bounds (cloud has {n} points)")]
    IndexOutOfBounds { id: u32, index: usize, n: usize },
    #[error("segment {id} has unsorted or duplicate indices")]
    UnsortedIndices { id: u32 },
    #[error("segments {a} and {b} overlap at point {index}")]
    Overlap { a: u32, b: u32, index: usize },
    #[error("flow length {flow} does not match cloud length {cloud}")]
    FlowMismatch { flow: usize, cloud: usize },
    #[error(transparent)]
    Hdbscan(#[from] hdbscan::HdbscanError),
}

/// One instance candidate: a set of point indices into the frame's
/// preprocessed cloud. Ids start at 1 and are unique within a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u32,
    pub point_indices: Vec<usize>,
}

/// The segment universe of one frame: pairwise disjoint, sorted, validated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSegments {
    n_points: usize,
    segments: Vec<Segment>,
}

impl FrameSegments {
    pub fn new(n_points: usize, segments: Vec<Segment>) -> Result<Self, ClusterError> {
        let mut owner: Vec<Option<u32>> = vec![None; n_points];
        let mut seen_ids = BTreeSet::new();
        for seg in &segments {
            if seg.point_indices.is_empty() {
                return Err(ClusterError::EmptySegment { id: seg.id });
            }
            if seg.id == 0 || !seen_ids.insert(seg.id) {
                return Err(ClusterError::BadSegmentId { id: seg.id });
            }
            if !seg.point_indices.windows(2).all(|w| w[0] < w[1]) {
                return Err(ClusterError::UnsortedIndices { id: seg.id });
            }
            for &index in &seg.point_indices {
                if index >= n_points {
                    return Err(ClusterError::IndexOutOfBounds { id: seg.id, index, n: n_points });
                }
                if let Some(other) = owner[index] {
                    return Err(ClusterError::Overlap { a: other, b: seg.id, index });
                }
                owner[index] = Some(seg.id);
            }
        }
        Ok(Self { n_points, segments })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, id: u32) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }
}

/// Per-point labels: `y` marks foreground, `d` is the owning segment id
/// (0 = unsegmented). Points sharing a nonzero `d` always share `y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub y: Vec<bool>,
    pub d: Vec<u32>,
}

impl LabeledCloud {
    pub fn from_segments(segs: &FrameSegments, foreground: &BTreeSet<u32>) -> Self {
        let mut y = vec![false; segs.n_points];
        let mut d = vec![0u32; segs.n_points];
        for seg in &segs.segments {
            let fg = foreground.contains(&seg.id);
            for &i in &seg.point_indices {
                y[i] = fg;
                d[i] = seg.id;
            }
        }
        Self { y, d }
    }

    pub fn foreground_count(&self) -> usize {
        self.y.iter().filter(|&&v| v).count()
    }
}

/// Scaling that balances pixel, spatial and motion coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Meters per pixel applied to image coordinates.
    pub pixel_to_meter: f64,
    /// Amplification applied to the flow coordinates.
    pub flow_scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { pixel_to_meter: 0.05, flow_scale: 5.0 }
    }
}

/// Builds the 8D clustering features for every point of `cloud`.
///
/// Invisible points (behind the camera or out of frame) take the nearest
/// valid pixel coordinate so every point stays clusterable.
pub fn assemble_features(
    cloud: &PointCloud,
    flow: &[Vector3<f64>],
    calib: &Calibration,
    cfg: &FeatureConfig,
) -> Result<Vec<[f64; 8]>, ClusterError> {
    if flow.len() != cloud.len() {
        return Err(ClusterError::FlowMismatch { flow: flow.len(), cloud: cloud.len() });
    }
    let projections = project_to_image(cloud, &calib.intrinsics, &calib.t_cl);
    let (w, h) = (calib.intrinsics.width as f64, calib.intrinsics.height as f64);
    Ok(cloud
        .points()
        .iter()
        .zip(&projections)
        .zip(flow)
        .map(|((p, pr), f)| {
            let (u, v) = if pr.visible {
                (pr.u, pr.v)
            } else {
                (pr.u.clamp(0.0, w - 1.0), pr.v.clamp(0.0, h - 1.0))
            };
            [
                u * cfg.pixel_to_meter,
                v * cfg.pixel_to_meter,
                p.x,
                p.y,
                p.z,
                f.x * cfg.flow_scale,
                f.y * cfg.flow_scale,
                f.z * cfg.flow_scale,
            ]
        })
        .collect())
}

/// Clusters feature vectors into the frame's segment universe. Cluster 0
/// becomes segment 1 and so on; noise points stay unsegmented.
pub fn cluster_frame(
    features: &[[f64; 8]],
    params: &HdbscanParams,
) -> Result<FrameSegments, ClusterError> {
    let data: Vec<Vec<f64>> = features.iter().map(|f| f.to_vec()).collect();
    let labeling = hdbscan(&data, params)?;
    let mut segments: Vec<Segment> = (0..labeling.num_clusters)
        .map(|c| Segment { id: c as u32 + 1, point_indices: Vec::new() })
        .collect();
    for (i, &l) in labeling.labels.iter().enumerate() {
        if l >= 0 {
            segments[l as usize].point_indices.push(i);
        }
    }
    FrameSegments::new(features.len(), segments)
}

/// Motion statistic thresholds for the foreground decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionLabelConfig {
    /// Speed (m/frame) above which a point counts as moving.
    pub sigma: f64,
    /// Fraction of moving points a segment must exceed to be foreground.
    pub eta: f64,
}

impl Default for MotionLabelConfig {
    fn default() -> Self {
        Self { sigma: 0.05, eta: 0.8 }
    }
}

/// A segment is moving foreground iff strictly more than `eta` of its
/// points have flow norm strictly above `sigma`. A fraction of exactly
/// `eta` stays background.
pub fn label_foreground(
    segs: &FrameSegments,
    flow: &[Vector3<f64>],
    cfg: &MotionLabelConfig,
) -> Result<BTreeSet<u32>, ClusterError> {
    if flow.len() != segs.n_points {
        return Err(ClusterError::FlowMismatch { flow: flow.len(), cloud: segs.n_points });
    }
    let mut fg = BTreeSet::new();
    for seg in &segs.segments {
        let moving = seg
            .point_indices
            .iter()
            .filter(|&&i| flow[i].norm() > cfg.sigma)
            .count();
        let fraction = moving as f64 / seg.point_indices.len() as f64;
        if fraction > cfg.eta {
            fg.insert(seg.id);
        }
    }
    Ok(fg)
}
