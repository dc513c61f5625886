//! Temporal consistency: centroid tracking, static-object rediscovery,
//! and tracklet label smoothing.
//!
//! Tracking runs in the global frame so ego motion is already removed: a
//! parked object's track barely moves, which is exactly the cue used to
//! decide where to look for the points its segments missed.

use super::kalman::{Kalman, KalmanConfig};
use super::{FrameState, FusionConfig};
use crate::cluster::Segment;
use crate::geom::{
    bbox2d_iou, bbox3d_from_points, bbox3d_iou, project_to_image, BBox2D, BBox3D, Calibration,
    PointCloud,
};
use nalgebra::Point3;

/// One matched observation of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackObs {
    pub frame: usize,
    pub segment_id: u32,
    pub centroid: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub obs: Vec<TrackObs>,
}

impl Track {
    /// Displacement between the first and last observed centroid.
    pub fn displacement(&self) -> f64 {
        match (self.obs.first(), self.obs.last()) {
            (Some(a), Some(b)) => (b.centroid - a.centroid).norm(),
            _ => 0.0,
        }
    }

    pub fn observes_frame(&self, frame: usize) -> bool {
        self.obs.iter().any(|o| o.frame == frame)
    }
}

struct ActiveTrack {
    kf: Kalman,
    missed: usize,
    obs: Vec<TrackObs>,
    /// Creation order, for deterministic output ordering.
    born: usize,
}

/// Associates per-frame foreground segment centroids (global frame) into
/// tracks: greedy nearest-first matching inside the gate, constant
/// velocity coasting for up to `max_missed` consecutive misses.
pub fn track_centroids(
    per_frame: &[Vec<(u32, Point3<f64>)>],
    cfg: &FusionConfig,
    kalman: KalmanConfig,
) -> Vec<Track> {
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut done: Vec<ActiveTrack> = Vec::new();
    let mut born = 0usize;
    for (frame, dets) in per_frame.iter().enumerate() {
        for t in &mut active {
            t.kf.predict();
        }
        // Candidate pairs inside the gate, nearest first; ties resolve by
        // track then detection order.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in active.iter().enumerate() {
            let p = t.kf.position();
            for (di, (_, c)) in dets.iter().enumerate() {
                let dist = (c - p).norm();
                if dist < cfg.gate {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; active.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let (id, c) = dets[di];
            active[ti].kf.update(&c);
            active[ti].missed = 0;
            active[ti].obs.push(TrackObs { frame, segment_id: id, centroid: c });
        }
        // Retire tracks that outstayed the miss budget.
        let mut still = Vec::new();
        for (ti, mut t) in active.drain(..).enumerate() {
            if !track_used[ti] {
                t.missed += 1;
            }
            if t.missed > cfg.max_missed {
                done.push(t);
            } else {
                still.push(t);
            }
        }
        active = still;
        for (di, &(id, c)) in dets.iter().enumerate() {
            if !det_used[di] {
                active.push(ActiveTrack {
                    kf: Kalman::new(&c, kalman),
                    missed: 0,
                    obs: vec![TrackObs { frame, segment_id: id, centroid: c }],
                    born,
                });
                born += 1;
            }
        }
    }
    done.extend(active);
    done.sort_by_key(|t| t.born);
    done.into_iter().map(|t| Track { obs: t.obs }).collect()
}

/// Inserts segments for near-stationary tracks at the frames they miss:
/// unsegmented points within the track's observed extent around its mean
/// center become a new foreground segment. Returns the number of
/// segments inserted.
pub fn rediscover_static(
    states: &mut [FrameState],
    globals: &[Vec<Point3<f64>>],
    tracks: &[Track],
    cfg: &FusionConfig,
) -> usize {
    assert_eq!(states.len(), globals.len());
    let mut inserted = 0usize;
    for track in tracks {
        if track.obs.len() < cfg.min_track_observations
            || track.displacement() >= cfg.static_displacement
        {
            continue;
        }
        let mut mean = Point3::origin();
        for o in &track.obs {
            mean += o.centroid.coords;
        }
        mean /= track.obs.len() as f64;
        // Largest distance from an observed centroid to its segment's
        // points bounds how far the object's surface reaches.
        let mut radius: f64 = 0.0;
        for o in &track.obs {
            if let Some(seg) = states[o.frame].segments.get(o.segment_id) {
                for &i in &seg.point_indices {
                    radius = radius.max((globals[o.frame][i] - o.centroid).norm());
                }
            }
        }
        if radius == 0.0 {
            continue;
        }
        for frame in 0..states.len() {
            if track.observes_frame(frame) {
                continue;
            }
            let state = &mut states[frame];
            let candidates: Vec<usize> = (0..globals[frame].len())
                .filter(|&i| {
                    state.labels.d[i] == 0 && (globals[frame][i] - mean).norm() <= radius
                })
                .collect();
            if candidates.len() < cfg.min_rediscover_points {
                continue;
            }
            let new_id =
                states[frame].segments.segments().iter().map(|s| s.id).max().unwrap_or(0) + 1;
            let mut segments = states[frame].segments.segments().to_vec();
            segments.push(Segment { id: new_id, point_indices: candidates.clone() });
            let rebuilt = crate::cluster::FrameSegments::new(globals[frame].len(), segments)
                .expect("candidates were unsegmented and sorted");
            states[frame].segments = rebuilt;
            for &i in &candidates {
                states[frame].labels.d[i] = new_id;
                states[frame].labels.y[i] = true;
            }
            inserted += 1;
        }
    }
    inserted
}

/// Per-segment boxes used to link tracklets across frames.
struct SegmentBoxes {
    id: u32,
    aabb: BBox3D,
    image: Option<BBox2D>,
    label: bool,
}

fn frame_segment_boxes(
    state: &FrameState,
    global: &[Point3<f64>],
    cloud: &PointCloud,
    calib: &Calibration,
) -> Vec<SegmentBoxes> {
    let projections = project_to_image(cloud, &calib.intrinsics, &calib.t_cl);
    state
        .segments
        .segments()
        .iter()
        .map(|seg| {
            let aabb = bbox3d_from_points(seg.point_indices.iter().map(|&i| &global[i]))
                .expect("segments are non-empty");
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
            let image = (visible > 0)
                .then(|| BBox2D::new(lo.0, lo.1, hi.0 + 1.0, hi.1 + 1.0, 1.0).unwrap());
            let label = state.labels.y[seg.point_indices[0]];
            SegmentBoxes { id: seg.id, aabb, image, label }
        })
        .collect()
}

/// Links segments of consecutive frames into tracklets (3D overlap above
/// `link_3d_iou`, or image overlap above `link_2d_iou`), then rewrites
/// every tracklet's labels: shorter than `tracklet_min_len` becomes
/// background; otherwise the majority label wins and ties become
/// background. Returns the number of segments whose label flipped.
pub fn smooth_labels(
    states: &mut [FrameState],
    globals: &[Vec<Point3<f64>>],
    clouds: &[PointCloud],
    calib: &Calibration,
    cfg: &FusionConfig,
) -> usize {
    let n_frames = states.len();
    assert_eq!(globals.len(), n_frames);
    assert_eq!(clouds.len(), n_frames);
    let boxes: Vec<Vec<SegmentBoxes>> = (0..n_frames)
        .map(|f| frame_segment_boxes(&states[f], &globals[f], &clouds[f], calib))
        .collect();

    // Union-find over (frame, segment position).
    let offsets: Vec<usize> = boxes
        .iter()
        .scan(0usize, |acc, b| {
            let o = *acc;
            *acc += b.len();
            Some(o)
        })
        .collect();
    let total: usize = boxes.iter().map(|b| b.len()).sum();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for f in 0..n_frames.saturating_sub(1) {
        let (cur, next) = (&boxes[f], &boxes[f + 1]);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, a) in cur.iter().enumerate() {
            for (bi, b) in next.iter().enumerate() {
                let iou3 = bbox3d_iou(&a.aabb, &b.aabb);
                let iou2 = match (&a.image, &b.image) {
                    (Some(x), Some(y)) => bbox2d_iou(x, y),
                    _ => 0.0,
                };
                if iou3 > cfg.link_3d_iou || iou2 > cfg.link_2d_iou {
                    pairs.push((iou3.max(iou2), ai, bi));
                }
            }
        }
        pairs.sort_by(
            |x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)),
        );
        let mut cur_used = vec![false; cur.len()];
        let mut next_used = vec![false; next.len()];
        for (_, ai, bi) in pairs {
            if cur_used[ai] || next_used[bi] {
                continue;
            }
            cur_used[ai] = true;
            next_used[bi] = true;
            let (ra, rb) = (find(&mut parent, offsets[f] + ai), find(&mut parent, offsets[f + 1] + bi));
            if ra != rb {
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                parent[hi] = lo;
            }
        }
    }

    // Majority vote per tracklet.
    let mut members: std::collections::BTreeMap<usize, Vec<(usize, usize)>> =
        std::collections::BTreeMap::new();
    for f in 0..n_frames {
        for s in 0..boxes[f].len() {
            let root = find(&mut parent, offsets[f] + s);
            members.entry(root).or_default().push((f, s));
        }
    }
    let mut flipped = 0usize;
    for group in members.values() {
        let fg = group.iter().filter(|&&(f, s)| boxes[f][s].label).count();
        let target = group.len() >= cfg.tracklet_min_len && fg * 2 > group.len();
        for &(f, s) in group {
            if boxes[f][s].label != target {
                flipped += 1;
                let id = boxes[f][s].id;
                let state = &mut states[f];
                let seg = state.segments.get(id).expect("id from this frame").clone();
                for &i in &seg.point_indices {
                    state.labels.y[i] = target;
                }
            }
        }
    }
    flipped
}
