//! Cross-view fusion: projects 3D segments into the image, merges their
//! boxes with detector output, and feeds image evidence back into the 3D
//! label state.
//!
//! The exchange runs in both directions. 3D segments become 2D boxes that
//! train the image scorer; detector boxes promote overlooked segments to
//! foreground; centroid tracks recover frames where a static object was
//! missed entirely; and tracklet voting smooths labels over time.

mod kalman;
mod tracks;

pub use kalman::{Kalman, KalmanConfig};
pub use tracks::{rediscover_static, smooth_labels, track_centroids, Track, TrackObs};

use crate::cluster::{FrameSegments, LabeledCloud};
use crate::geom::{bbox2d_iou, project_to_image, BBox2D, Calibration, PointCloud};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

/// The evolving per-frame label state the alternating steps rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub segments: FrameSegments,
    pub labels: LabeledCloud,
}

impl FrameState {
    pub fn new(segments: FrameSegments, labels: LabeledCloud) -> Self {
        assert_eq!(segments.n_points(), labels.y.len());
        assert_eq!(segments.n_points(), labels.d.len());
        Self { segments, labels }
    }

    /// Centroids of foreground segments in the supplied coordinates
    /// (callers pass global-frame points so tracks ignore ego motion).
    pub fn foreground_centroids(&self, points: &[Point3<f64>]) -> Vec<(u32, Point3<f64>)> {
        self.segments
            .segments()
            .iter()
            .filter(|seg| self.labels.y[seg.point_indices[0]])
            .map(|seg| {
                let mut c = Point3::origin();
                for &i in &seg.point_indices {
                    c += points[i].coords;
                }
                (seg.id, c / seg.point_indices.len() as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Visible projected points a segment needs before its box counts.
    pub min_visible_points: usize,
    /// Overlap above which a lower-priority box is dropped when merging.
    pub merge_nms_iou: f64,
    /// Association gate for centroid tracking, meters.
    pub gate: f64,
    /// Consecutive missed frames before a track is closed.
    pub max_missed: usize,
    /// Observations a track needs before rediscovery trusts it.
    pub min_track_observations: usize,
    /// Start-to-end displacement below which a track counts as static.
    pub static_displacement: f64,
    /// Points required to insert a rediscovered segment.
    pub min_rediscover_points: usize,
    /// Tracklets shorter than this are demoted to background.
    pub tracklet_min_len: usize,
    /// 3D overlap that links segments of consecutive frames.
    pub link_3d_iou: f64,
    /// Image overlap that links segments of consecutive frames.
    pub link_2d_iou: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            min_visible_points: 5,
            merge_nms_iou: 0.3,
            gate: 2.0,
            max_missed: 3,
            min_track_observations: 3,
            static_displacement: 3.0,
            min_rediscover_points: 5,
            tracklet_min_len: 5,
            link_3d_iou: 0.9,
            link_2d_iou: 0.3,
        }
    }
}

/// Image boxes of the foreground segments: tight bounds over the visible
/// projected points, widened by one pixel past the max corner so a single
/// point still spans a pixel, clipped to the image. Segments with fewer
/// than `min_visible` visible points are skipped.
pub fn segment_boxes_2d(
    segments: &FrameSegments,
    labels: &LabeledCloud,
    cloud: &PointCloud,
    calib: &Calibration,
    min_visible: usize,
) -> Vec<(u32, BBox2D)> {
    let projections = project_to_image(cloud, &calib.intrinsics, &calib.t_cl);
    let mut out = Vec::new();
    for seg in segments.segments() {
        if !labels.y[seg.point_indices[0]] {
            continue;
        }
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut visible = 0usize;
        for &i in &seg.point_indices {
            let pr = &projections[i];
            if pr.visible {
                visible += 1;
                lo = (lo.0.min(pr.u), lo.1.min(pr.v));
                hi = (hi.0.max(pr.u), hi.1.max(pr.v));
            }
        }
        if visible < min_visible {
            continue;
        }
        let raw = BBox2D::new(lo.0, lo.1, hi.0 + 1.0, hi.1 + 1.0, 1.0)
            .expect("visible projections give a positive extent");
        if let Some(clipped) = raw.clipped(calib.intrinsics.width, calib.intrinsics.height) {
            out.push((seg.id, clipped));
        }
    }
    out
}

/// Merges projected segment boxes with detector boxes by greedy overlap
/// suppression. Projected boxes are listed first, so on equal scores they
/// win; a box survives only if it overlaps every kept box by at most
/// `nms_iou`.
pub fn merge_boxes(projected: &[BBox2D], detected: &[BBox2D], nms_iou: f64) -> Vec<BBox2D> {
    let mut all: Vec<BBox2D> = projected.iter().chain(detected).cloned().collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut kept: Vec<BBox2D> = Vec::new();
    for cand in all {
        if kept.iter().all(|k| bbox2d_iou(k, &cand) <= nms_iou) {
            kept.push(cand);
        }
    }
    kept
}

/// Promotes to foreground the primary segment of each merged box: the
/// segment owning the most visible projected points inside the box
/// (bounds closed, ties to the lower id). Boxes without any segment
/// points are ignored; foreground is never withdrawn here. Returns how
/// many segments flipped.
pub fn promote_segments(
    state: &mut FrameState,
    boxes: &[BBox2D],
    cloud: &PointCloud,
    calib: &Calibration,
) -> usize {
    let projections = project_to_image(cloud, &calib.intrinsics, &calib.t_cl);
    let mut promoted = 0usize;
    for b in boxes {
        let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
        for (i, pr) in projections.iter().enumerate() {
            let id = state.labels.d[i];
            if id != 0
                && pr.visible
                && pr.u >= b.x1
                && pr.u <= b.x2
                && pr.v >= b.y1
                && pr.v <= b.y2
            {
                *counts.entry(id).or_insert(0) += 1;
            }
        }
        // BTreeMap iterates ids ascending, so `>` keeps the lower id on ties.
        let primary = counts
            .iter()
            .fold(None::<(u32, usize)>, |best, (&id, &n)| match best {
                Some((_, bn)) if n <= bn => best,
                _ => Some((id, n)),
            })
            .map(|(id, _)| id);
        if let Some(id) = primary {
            let seg = state.segments.get(id).expect("id came from labels.d");
            if !state.labels.y[seg.point_indices[0]] {
                for &i in &seg.point_indices {
                    state.labels.y[i] = true;
                }
                promoted += 1;
            }
        }
    }
    promoted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Segment;
    use crate::geom::{CameraIntrinsics, Frame, RigidTransform};
    use nalgebra::{Matrix3, Vector3};

    fn test_calib() -> Calibration {
        Calibration {
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap(),
            t_cl: RigidTransform::new(Matrix3::identity(), Vector3::zeros()).unwrap(),
        }
    }

    fn cloud(points: Vec<Point3<f64>>) -> PointCloud {
        PointCloud::new(0, Frame::Ego, points).unwrap()
    }

    fn state(n: usize, segs: Vec<Segment>, fg: &[u32]) -> FrameState {
        let segments = FrameSegments::new(n, segs).unwrap();
        let fg_set: std::collections::BTreeSet<u32> = fg.iter().copied().collect();
        let labels = LabeledCloud::from_segments(&segments, &fg_set);
        FrameState::new(segments, labels)
    }

    #[test]
    fn segment_boxes_cover_visible_projections_only() {
        // Segment 1: three visible points plus one behind the camera.
        // Segment 2: foreground but only two visible. Segment 3: background.
        let pts = vec![
            Point3::new(0.0, 0.0, 2.0),   // u 64, v 48
            Point3::new(0.2, 0.0, 2.0),   // u 74
            Point3::new(0.0, 0.2, 2.0),   // v 58
            Point3::new(0.0, 0.0, -1.0),  // invisible
            Point3::new(0.4, 0.0, 2.0),
            Point3::new(0.4, 0.1, 2.0),
            Point3::new(-0.4, 0.0, 2.0),
        ];
        let st = state(
            7,
            vec![
                Segment { id: 1, point_indices: vec![0, 1, 2, 3] },
                Segment { id: 2, point_indices: vec![4, 5] },
                Segment { id: 3, point_indices: vec![6] },
            ],
            &[1, 2],
        );
        let c = cloud(pts);
        let boxes = segment_boxes_2d(&st.segments, &st.labels, &c, &test_calib(), 3);
        assert_eq!(boxes.len(), 1);
        let (id, b) = &boxes[0];
        assert_eq!(*id, 1);
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (64.0, 48.0, 75.0, 59.0));
        assert_eq!(b.score, 1.0);
    }

    #[test]
    fn merging_prefers_projected_boxes_on_ties() {
        let a = BBox2D::new(0.0, 0.0, 10.0, 10.0, 1.0).unwrap();
        let b = BBox2D::new(1.0, 1.0, 11.0, 11.0, 1.0).unwrap(); // heavy overlap with a
        let c = BBox2D::new(50.0, 50.0, 60.0, 60.0, 0.9).unwrap();
        let merged = merge_boxes(&[a], &[b, c], 0.3);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0], a);
        assert_eq!(merged[1], c);
    }

    #[test]
    fn merging_keeps_lightly_overlapping_boxes() {
        let a = BBox2D::new(0.0, 0.0, 10.0, 10.0, 1.0).unwrap();
        // IoU = 25 / 175 ~ 0.143, below the 0.3 threshold.
        let b = BBox2D::new(5.0, 5.0, 15.0, 15.0, 0.8).unwrap();
        let merged = merge_boxes(&[a], &[b], 0.3);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn promotion_picks_densest_segment_and_keeps_existing_foreground() {
        // Segment 1 (bg): 3 points inside the box. Segment 2 (bg): 2 inside,
        // 1 outside. Segment 3 (fg): 1 inside, already foreground.
        let pts = vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.05, 0.0, 2.0),
            Point3::new(0.0, 0.05, 2.0),
            Point3::new(0.1, 0.1, 2.0),
            Point3::new(0.1, 0.0, 2.0),
            Point3::new(3.0, 0.0, 2.0), // far outside the box
            Point3::new(0.0, 0.1, 2.0),
        ];
        let mut st = state(
            7,
            vec![
                Segment { id: 1, point_indices: vec![0, 1, 2] },
                Segment { id: 2, point_indices: vec![3, 4, 5] },
                Segment { id: 3, point_indices: vec![6] },
            ],
            &[3],
        );
        let c = cloud(pts);
        let b = BBox2D::new(60.0, 44.0, 80.0, 60.0, 0.9).unwrap();
        let flipped = promote_segments(&mut st, &[b], &c, &test_calib());
        assert_eq!(flipped, 1);
        assert!(st.labels.y[0] && st.labels.y[1] && st.labels.y[2]);
        assert!(!st.labels.y[3], "runner-up stays background");
        assert!(st.labels.y[6], "existing foreground is untouched");

        // A second pass changes nothing: the primary is already foreground.
        let b2 = BBox2D::new(60.0, 44.0, 80.0, 60.0, 0.9).unwrap();
        assert_eq!(promote_segments(&mut st, &[b2], &c, &test_calib()), 0);
    }

    #[test]
    fn promotion_breaks_count_ties_toward_lower_id() {
        let pts = vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.05, 0.0, 2.0),
            Point3::new(0.0, 0.05, 2.0),
            Point3::new(0.05, 0.05, 2.0),
        ];
        let mut st = state(
            4,
            vec![
                Segment { id: 4, point_indices: vec![0, 1] },
                Segment { id: 7, point_indices: vec![2, 3] },
            ],
            &[],
        );
        let c = cloud(pts);
        let b = BBox2D::new(50.0, 40.0, 80.0, 60.0, 0.9).unwrap();
        assert_eq!(promote_segments(&mut st, &[b], &c, &test_calib()), 1);
        assert!(st.labels.y[0] && st.labels.y[1]);
        assert!(!st.labels.y[2] && !st.labels.y[3]);
    }

    #[test]
    fn foreground_centroids_skip_background() {
        let pts = vec![
            Point3::new(1.0, 0.0, 2.0),
            Point3::new(3.0, 0.0, 2.0),
            Point3::new(9.0, 9.0, 9.0),
        ];
        let st = state(
            3,
            vec![
                Segment { id: 1, point_indices: vec![0, 1] },
                Segment { id: 2, point_indices: vec![2] },
            ],
            &[1],
        );
        let cents = st.foreground_centroids(&pts);
        assert_eq!(cents, vec![(1, Point3::new(2.0, 0.0, 2.0))]);
    }
}
