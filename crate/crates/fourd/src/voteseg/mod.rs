//! Point segmenter: a per-point MLP over position and local voxel
//! statistics that votes for its instance center and classifies
//! foreground, trained on pseudo-labels, plus the grouping step that
//! turns votes into segments.
//!
//! Inference: foreground points (probability strictly above the
//! threshold) are shifted by their center vote and connected with
//! single-linkage at strictly less than `link_radius`; components smaller
//! than `min_points` are dropped. A segment's score is the mean
//! foreground probability of its members.

mod net;
pub mod train;

pub use net::{loss_and_grad, sigmoid, Batch, Grads, LossWeights, SegNet};

use crate::cluster::LabeledCloud;
use crate::geom::GridIndex;
use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const INPUT_DIM: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotesegConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Fraction of total steps spent linearly rising to `lr_max` before
    /// the cosine decay back to `lr_min`.
    pub rise_frac: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub points_per_frame: usize,
    pub loss: LossWeightsConfig,
    pub prob_threshold: f64,
    pub link_radius: f64,
    pub min_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeightsConfig {
    pub cls_weight: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeightsConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self { cls_weight: w.cls_weight, focal_gamma: w.focal_gamma, focal_alpha: w.focal_alpha }
    }
}

impl From<LossWeightsConfig> for LossWeights {
    fn from(c: LossWeightsConfig) -> Self {
        Self { cls_weight: c.cls_weight, focal_gamma: c.focal_gamma, focal_alpha: c.focal_alpha }
    }
}

impl Default for VotesegConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 12,
            lr_min: 1e-5,
            lr_max: 1e-3,
            rise_frac: 0.4,
            momentum: 0.9,
            clip_norm: 10.0,
            points_per_frame: 1200,
            loss: LossWeightsConfig::default(),
            prob_threshold: 0.5,
            link_radius: 0.6,
            min_points: 5,
            seed: 0,
        }
    }
}

/// Voxel grid for the local-statistics features. The z extent spans the
/// whole cropped height, so the grid is effectively a 2D bird's-eye one.
pub const VOXEL_SIZE: [f64; 3] = [0.32, 0.32, 6.0];

/// Input scaling keeping tanh pre-activations in a moderate range.
const POS_SCALE: [f64; 3] = [0.05, 0.1, 0.5];
const OFFSET_SCALE: [f64; 3] = [5.0, 5.0, 0.5];
const VAR_SCALE: [f64; 3] = [20.0, 20.0, 2.0];
const COUNT_SCALE: f64 = 0.3;

fn voxel_key(p: &Point3<f64>) -> (i64, i64, i64) {
    (
        (p.x / VOXEL_SIZE[0]).floor() as i64,
        (p.y / VOXEL_SIZE[1]).floor() as i64,
        (p.z / VOXEL_SIZE[2]).floor() as i64,
    )
}

struct VoxelStats {
    count: usize,
    mean: [f64; 3],
    var: [f64; 3],
}

/// Per-point features: scaled position plus statistics of the point's
/// voxel and the occupancy of its six axis neighbors. Returns n x 19.
pub fn compute_features(points: &[Point3<f64>]) -> DMatrix<f64> {
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(voxel_key(p)).or_default().push(i);
    }
    let mut stats: BTreeMap<(i64, i64, i64), VoxelStats> = BTreeMap::new();
    for (key, members) in &cells {
        let mut mean = [0.0; 3];
        for &i in members {
            let p = &points[i];
            for (a, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                mean[a] += c;
            }
        }
        let n = members.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0; 3];
        for &i in members {
            let p = &points[i];
            for (a, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                var[a] += (c - mean[a]) * (c - mean[a]);
            }
        }
        for v in &mut var {
            *v /= n;
        }
        stats.insert(*key, VoxelStats { count: members.len(), mean, var });
    }

    let mut out = DMatrix::zeros(points.len(), INPUT_DIM);
    for (i, p) in points.iter().enumerate() {
        let key = voxel_key(p);
        let st = &stats[&key];
        let center = [
            (key.0 as f64 + 0.5) * VOXEL_SIZE[0],
            (key.1 as f64 + 0.5) * VOXEL_SIZE[1],
            (key.2 as f64 + 0.5) * VOXEL_SIZE[2],
        ];
        out[(i, 0)] = p.x * POS_SCALE[0];
        out[(i, 1)] = p.y * POS_SCALE[1];
        out[(i, 2)] = p.z * POS_SCALE[2];
        out[(i, 3)] = (st.count as f64).ln_1p() * COUNT_SCALE;
        for a in 0..3 {
            out[(i, 4 + a)] = (st.mean[a] - center[a]) * OFFSET_SCALE[a];
            out[(i, 7 + a)] = st.var[a] * VAR_SCALE[a];
        }
        let neighbors = [
            (key.0 - 1, key.1, key.2),
            (key.0 + 1, key.1, key.2),
            (key.0, key.1 - 1, key.2),
            (key.0, key.1 + 1, key.2),
            (key.0, key.1, key.2 - 1),
            (key.0, key.1, key.2 + 1),
        ];
        for (k, nk) in neighbors.into_iter().enumerate() {
            out[(i, 10 + k)] = if cells.contains_key(&nk) { 1.0 } else { 0.0 };
        }
        // Columns 16..19 stay zero (reserved).
    }
    out
}

/// Builds a training batch from labels: foreground flags, and for every
/// labeled point the displacement to its segment's centroid.
pub fn make_batch(
    points: &[Point3<f64>],
    features: &DMatrix<f64>,
    labeled: &LabeledCloud,
) -> Batch {
    assert_eq!(points.len(), features.nrows());
    assert_eq!(points.len(), labeled.y.len());
    let mut sums: BTreeMap<u32, ([f64; 3], usize)> = BTreeMap::new();
    for (i, &d) in labeled.d.iter().enumerate() {
        if d != 0 {
            let e = sums.entry(d).or_insert(([0.0; 3], 0));
            let p = &points[i];
            e.0[0] += p.x;
            e.0[1] += p.y;
            e.0[2] += p.z;
            e.1 += 1;
        }
    }
    let centroid = |d: u32| -> [f64; 3] {
        let (s, n) = sums[&d];
        [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64]
    };
    let mut center_target = vec![[0.0; 3]; points.len()];
    for (i, (&fg, &d)) in labeled.y.iter().zip(&labeled.d).enumerate() {
        if fg {
            debug_assert!(d != 0, "foreground point without a segment");
            let c = centroid(d);
            let p = &points[i];
            center_target[i] = [c[0] - p.x, c[1] - p.y, c[2] - p.z];
        }
    }
    Batch { x: features.clone(), foreground: labeled.y.clone(), center_target }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferredSegment {
    /// Indices into the prepared cloud, ascending.
    pub point_indices: Vec<usize>,
    /// Mean foreground probability of the members.
    pub score: f64,
}

/// Per-point foreground probabilities and center-shifted positions.
pub fn predict(
    features: &DMatrix<f64>,
    points: &[Point3<f64>],
    net: &SegNet,
) -> (Vec<f64>, Vec<Point3<f64>>) {
    let y = net.forward(features);
    let probs: Vec<f64> = (0..y.nrows()).map(|r| sigmoid(y[(r, 3)])).collect();
    let shifted: Vec<Point3<f64>> = (0..y.nrows())
        .map(|r| Point3::new(
            points[r].x + y[(r, 0)],
            points[r].y + y[(r, 1)],
            points[r].z + y[(r, 2)],
        ))
        .collect();
    (probs, shifted)
}

pub fn infer(
    points: &[Point3<f64>],
    features: &DMatrix<f64>,
    net: &SegNet,
    cfg: &VotesegConfig,
) -> Vec<InferredSegment> {
    let (probs, shifted) = predict(features, points, net);
    let fg: Vec<usize> =
        (0..points.len()).filter(|&i| probs[i] > cfg.prob_threshold).collect();
    if fg.is_empty() {
        return Vec::new();
    }
    let fg_shifted: Vec<Point3<f64>> = fg.iter().map(|&i| shifted[i]).collect();
    let groups = connected_components(&fg_shifted, cfg.link_radius);
    let mut segments = Vec::new();
    for group in groups {
        if group.len() < cfg.min_points {
            continue;
        }
        let point_indices: Vec<usize> = group.iter().map(|&k| fg[k]).collect();
        let score = point_indices.iter().map(|&i| probs[i]).sum::<f64>()
            / point_indices.len() as f64;
        segments.push(InferredSegment { point_indices, score });
    }
    segments.sort_by_key(|s| s.point_indices[0]);
    segments
}

/// Single-linkage components under strict `< radius`, each sorted
/// ascending, ordered by smallest member.
pub fn connected_components(points: &[Point3<f64>], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let grid = GridIndex::build(points, radius);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in grid.candidates_near(&points[i]) {
            if j <= i {
                continue;
            }
            if (points[j] - points[i]).norm() < radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    let (lo, hi) = (ri.min(rj), ri.max(rj));
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_have_expected_shape_and_scaling() {
        let points =
            vec![Point3::new(10.0, 2.0, 1.0), Point3::new(10.1, 2.0, 1.0), Point3::new(30.0, -5.0, 0.5)];
        let f = compute_features(&points);
        assert_eq!(f.nrows(), 3);
        assert_eq!(f.ncols(), INPUT_DIM);
        assert_eq!(f[(0, 0)], 10.0 * 0.05);
        assert_eq!(f[(2, 1)], -5.0 * 0.1);
        // First two points share a voxel: count feature equal, occupancy equal.
        assert_eq!(f[(0, 3)], f[(1, 3)]);
        assert_eq!(f[(0, 3)], (2f64).ln_1p() * 0.3);
        // Reserved columns are zero.
        for i in 0..3 {
            for c in 16..19 {
                assert_eq!(f[(i, c)], 0.0);
            }
        }
    }

    #[test]
    fn neighbor_occupancy_sees_adjacent_voxel() {
        let points = vec![Point3::new(0.16, 0.16, 1.0), Point3::new(0.48, 0.16, 1.0)];
        let f = compute_features(&points);
        // Point 0 has +x neighbor occupied, point 1 has -x.
        assert_eq!(f[(0, 11)], 1.0);
        assert_eq!(f[(0, 10)], 0.0);
        assert_eq!(f[(1, 10)], 1.0);
    }

    #[test]
    fn batch_targets_point_to_segment_centroid() {
        let points = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(50.0, 0.0, 0.0),
        ];
        let features = compute_features(&points);
        let labeled = LabeledCloud { y: vec![true, true, false], d: vec![7, 7, 0] };
        let batch = make_batch(&points, &features, &labeled);
        assert_eq!(batch.center_target[0], [1.0, 0.0, 0.0]);
        assert_eq!(batch.center_target[1], [-1.0, 0.0, 0.0]);
        assert_eq!(batch.center_target[2], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn components_respect_strict_radius() {
        let points = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.59, 0.0, 0.0),
            // Exactly at the radius: must NOT link.
            Point3::new(1.19, 0.0, 0.0),
        ];
        let groups = connected_components(&points, 0.6);
        assert_eq!(groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn chain_linkage_merges_transitively() {
        let points: Vec<Point3<f64>> =
            (0..10).map(|i| Point3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let groups = connected_components(&points, 0.6);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0], (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn infer_drops_small_components() {
        // A net biased to output strong foreground and zero offsets.
        let mut net = SegNet::init(INPUT_DIM, 8, 1, 0);
        net.w3.fill(0.0);
        net.b3.fill(0.0);
        net.b3[3] = 5.0;
        let mut points: Vec<Point3<f64>> =
            (0..8).map(|i| Point3::new(i as f64 * 0.1, 0.0, 1.0)).collect();
        points.push(Point3::new(30.0, 10.0, 1.0));
        points.push(Point3::new(30.2, 10.0, 1.0));
        let features = compute_features(&points);
        let cfg = VotesegConfig { min_points: 5, ..VotesegConfig::default() };
        let segs = infer(&points, &features, &net, &cfg);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].point_indices, (0..8).collect::<Vec<_>>());
        assert!(segs[0].score > 0.99);
    }
}
