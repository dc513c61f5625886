//! Class-agnostic detection metrics: greedy matching, all-point
//! average precision with size buckets for 2D boxes, point-set-overlap
//! AP and recall for 3D segments, and a foreground-overlap score.
//!
//! Every number is deterministic: detections are ranked by score with
//! index tie-breaks, frames pool in order, and reports serialize with
//! shortest round-trip floats.

mod mask;

pub use mask::{points_to_mask, Mask};

use crate::geom::{bbox2d_iou, point_set_iou, BBox2D, BBox3D};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Detections per frame beyond this rank are discarded before scoring.
pub const MAX_DETECTIONS_PER_FRAME: usize = 100;

/// Overlap threshold for the 2D box metrics.
pub const IOU_2D: f64 = 0.5;

/// Overlap thresholds for the 3D point-set metrics.
pub const IOU_3D_LOW: f64 = 0.7;
pub const IOU_3D_HIGH: f64 = 0.9;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Ground-truth box area classes. Bounds follow the usual pixel-area
/// convention: small below 32x32, large above 96x96, medium between
/// (both edges inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

pub fn size_bucket(area: f64) -> SizeBucket {
    if area < 1024.0 {
        SizeBucket::Small
    } else if area <= 9216.0 {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

/// Outcome of matching one frame's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in evaluation order: score descending, ties to
    /// the lower index.
    pub order: Vec<usize>,
    /// Per detection (original index): the matched gt, if any.
    pub det_match: Vec<Option<usize>>,
    /// Per gt: the detection that claimed it, if any.
    pub gt_match: Vec<Option<usize>>,
}

/// Greedy matcher: detections in score order each claim the unmatched gt
/// they overlap most, provided that overlap exceeds `threshold`. Equal
/// overlaps resolve to the lower gt index.
pub fn match_greedy(
    scores: &[f64],
    n_gt: usize,
    iou: impl Fn(usize, usize) -> f64,
    threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut det_match = vec![None; scores.len()];
    let mut gt_match = vec![None; n_gt];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..n_gt {
            if gt_match[g].is_some() {
                continue;
            }
            let v = iou(d, g);
            if v > threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            det_match[d] = Some(g);
            gt_match[g] = Some(d);
        }
    }
    MatchResult { order, det_match, gt_match }
}

/// One pooled detection after matching: `Some(true)` counts as a true
/// positive, `Some(false)` as a false positive, `None` is ignored.
type Verdict = Option<bool>;

/// Area under the precision envelope plus final recall for a pooled,
/// rank-ordered verdict sequence. All-point interpolation: each true
/// positive contributes its recall step times the best precision seen at
/// or beyond its recall level.
pub fn ap_ar(verdicts: &[Verdict], n_gt: usize) -> (f64, f64) {
    if n_gt == 0 {
        return (0.0, 0.0);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points: Vec<(bool, f64, f64)> = Vec::new();
    for v in verdicts.iter().flatten() {
        if *v {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((*v, tp as f64 / (tp + fp) as f64, tp as f64 / n_gt as f64));
    }
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(is_tp, _, recall)) in points.iter().enumerate() {
        if is_tp {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    let ar = points.last().map_or(0.0, |p| p.2);
    (ap, ar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame2DEval {
    pub detections: Vec<BBox2D>,
    pub gts: Vec<BBox2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics2D {
    pub ap50: f64,
    pub ar50: f64,
    pub ap50_small: Option<f64>,
    pub ap50_medium: Option<f64>,
    pub ap50_large: Option<f64>,
    pub ar50_small: Option<f64>,
    pub ar50_medium: Option<f64>,
    pub ar50_large: Option<f64>,
    pub n_detections: usize,
    pub n_gts: usize,
}

/// One detection pooled across frames, with whatever matching context the
/// caller needs to reinterpret verdicts.
struct Pooled<C> {
    score: f64,
    frame: usize,
    det: usize,
    ctx: C,
}

fn rank_pooled<C>(pooled: &mut [Pooled<C>]) {
    pooled.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.frame.cmp(&b.frame))
            .then(a.det.cmp(&b.det))
    });
}

/// Pools every frame's matches and scores the 2D metrics at overlap 0.5.
/// Bucket variants reinterpret the same matching: a detection matched to
/// an out-of-bucket gt is ignored, an unmatched detection counts against
/// the bucket its own area falls in, and buckets without any gt report
/// `None`.
pub fn evaluate_2d(frames: &[Frame2DEval]) -> Metrics2D {
    // Context: (bucket of the matched gt if any, bucket of the detection).
    let mut pooled: Vec<Pooled<(Option<SizeBucket>, SizeBucket)>> = Vec::new();
    let mut n_gts = 0usize;
    let mut gt_bucket_counts = [0usize; 3];
    for (fi, frame) in frames.iter().enumerate() {
        n_gts += frame.gts.len();
        for g in &frame.gts {
            gt_bucket_counts[size_bucket(g.area()) as usize] += 1;
        }
        let mut keep: Vec<usize> = (0..frame.detections.len()).collect();
        keep.sort_by(|&a, &b| {
            frame.detections[b]
                .score
                .partial_cmp(&frame.detections[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        keep.truncate(MAX_DETECTIONS_PER_FRAME);
        let dets: Vec<&BBox2D> = keep.iter().map(|&i| &frame.detections[i]).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let m = match_greedy(
            &scores,
            frame.gts.len(),
            |d, g| bbox2d_iou(dets[d], &frame.gts[g]),
            IOU_2D,
        );
        for (local, &orig) in keep.iter().enumerate() {
            pooled.push(Pooled {
                score: scores[local],
                frame: fi,
                det: orig,
                ctx: (
                    m.det_match[local].map(|g| size_bucket(frame.gts[g].area())),
                    size_bucket(dets[local].area()),
                ),
            });
        }
    }
    rank_pooled(&mut pooled);
    let n_detections = pooled.len();

    let overall: Vec<Verdict> =
        pooled.iter().map(|p| Some(p.ctx.0.is_some())).collect();
    let (ap50, ar50) = ap_ar(&overall, n_gts);

    let mut per_bucket = [(None, None); 3];
    for bucket in [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large] {
        let n = gt_bucket_counts[bucket as usize];
        if n == 0 {
            continue;
        }
        let verdicts: Vec<Verdict> = pooled
            .iter()
            .map(|p| match p.ctx {
                (Some(b), _) if b == bucket => Some(true),
                (Some(_), _) => None,
                (None, own) if own == bucket => Some(false),
                (None, _) => None,
            })
            .collect();
        let (ap, ar) = ap_ar(&verdicts, n);
        per_bucket[bucket as usize] = (Some(ap), Some(ar));
    }
    Metrics2D {
        ap50,
        ar50,
        ap50_small: per_bucket[0].0,
        ap50_medium: per_bucket[1].0,
        ap50_large: per_bucket[2].0,
        ar50_small: per_bucket[0].1,
        ar50_medium: per_bucket[1].1,
        ar50_large: per_bucket[2].1,
        n_detections,
        n_gts,
    }
}

/// A predicted 3D instance: sorted point indices plus a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPointSet {
    pub points: Vec<usize>,
    pub score: f64,
}

/// A ground-truth 3D instance over the same point universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub id: u32,
    pub points: Vec<usize>,
    pub moving: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame3DEval {
    pub detections: Vec<ScoredPointSet>,
    pub gts: Vec<GtInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics3D {
    pub ap70: f64,
    pub ap90: f64,
    pub recall70: f64,
    pub recall90: f64,
    pub recall70_movers: Option<f64>,
    pub recall70_static: Option<f64>,
    pub ap70_movers: Option<f64>,
    pub ap70_static: Option<f64>,
    pub foreground_iou: f64,
    pub mean_instance_iou: f64,
    pub n_detections: usize,
    pub n_gts: usize,
}

/// Ground-truth instances of one frame: the indices of `points` inside
/// each box (bounds closed). Boxes that capture no points are dropped.
pub fn gt_3d_instances(
    points: &[Point3<f64>],
    boxes: &[(u32, BBox3D)],
    movers: &BTreeSet<u32>,
) -> Vec<GtInstance> {
    boxes
        .iter()
        .filter_map(|(id, b)| {
            let inside: Vec<usize> =
                (0..points.len()).filter(|&i| b.contains(&points[i])).collect();
            (!inside.is_empty()).then(|| GtInstance {
                id: *id,
                points: inside,
                moving: movers.contains(id),
            })
        })
        .collect()
}

fn recall_of(matched: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Scores the 3D metrics. AP and recall are computed at overlaps 0.7 and
/// 0.9; mover and static variants reinterpret the 0.7 matching on the gt
/// subset (`None` when the subset is empty): a detection matched outside
/// the subset is ignored, an unmatched detection stays a false positive.
/// The foreground overlap is the micro-averaged intersection over union
/// of all predicted points versus all gt instance points, and the
/// instance mean averages each gt's best single-detection overlap.
pub fn evaluate_3d(frames: &[Frame3DEval]) -> Metrics3D {
    let mut n_detections = 0usize;
    let mut n_gts = 0usize;
    // Context: mobility of the matched gt, `None` when unmatched.
    let mut pooled_low: Vec<Pooled<Option<bool>>> = Vec::new();
    let mut pooled_high: Vec<Pooled<bool>> = Vec::new();
    let mut matched_high = 0usize;
    let mut movers_total = 0usize;
    let mut movers_matched = 0usize;
    let mut static_total = 0usize;
    let mut static_matched = 0usize;
    let mut inter_total = 0usize;
    let mut union_total = 0usize;
    let mut instance_best_sum = 0.0f64;

    for (fi, frame) in frames.iter().enumerate() {
        n_gts += frame.gts.len();
        let mut keep: Vec<usize> = (0..frame.detections.len()).collect();
        keep.sort_by(|&a, &b| {
            frame.detections[b]
                .score
                .partial_cmp(&frame.detections[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        keep.truncate(MAX_DETECTIONS_PER_FRAME);
        let dets: Vec<&ScoredPointSet> = keep.iter().map(|&i| &frame.detections[i]).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let overlap = |threshold: f64| {
            match_greedy(
                &scores,
                frame.gts.len(),
                |d, g| point_set_iou(&dets[d].points, &frame.gts[g].points),
                threshold,
            )
        };
        let m_low = overlap(IOU_3D_LOW);
        let m_high = overlap(IOU_3D_HIGH);
        matched_high += m_high.gt_match.iter().flatten().count();
        for (local, &orig) in keep.iter().enumerate() {
            pooled_low.push(Pooled {
                score: scores[local],
                frame: fi,
                det: orig,
                ctx: m_low.det_match[local].map(|g| frame.gts[g].moving),
            });
            pooled_high.push(Pooled {
                score: scores[local],
                frame: fi,
                det: orig,
                ctx: m_high.det_match[local].is_some(),
            });
        }
        for (g, gt) in frame.gts.iter().enumerate() {
            let matched = m_low.gt_match[g].is_some();
            if gt.moving {
                movers_total += 1;
                movers_matched += matched as usize;
            } else {
                static_total += 1;
                static_matched += matched as usize;
            }
            let best = dets
                .iter()
                .map(|d| point_set_iou(&d.points, &gt.points))
                .fold(0.0f64, f64::max);
            instance_best_sum += best;
        }
        let pred_union: BTreeSet<usize> =
            dets.iter().flat_map(|d| d.points.iter().copied()).collect();
        let gt_union: BTreeSet<usize> =
            frame.gts.iter().flat_map(|g| g.points.iter().copied()).collect();
        inter_total += pred_union.intersection(&gt_union).count();
        union_total += pred_union.union(&gt_union).count();
    }
    rank_pooled(&mut pooled_low);
    rank_pooled(&mut pooled_high);
    n_detections += pooled_low.len();
    let verdicts_low: Vec<Verdict> =
        pooled_low.iter().map(|p| Some(p.ctx.is_some())).collect();
    let verdicts_high: Vec<Verdict> = pooled_high.iter().map(|p| Some(p.ctx)).collect();
    let (ap70, recall70_via_ar) = ap_ar(&verdicts_low, n_gts);
    let (ap90, _) = ap_ar(&verdicts_high, n_gts);
    let recall70 = recall70_via_ar;
    let recall90 = recall_of(matched_high, n_gts);

    let subset_ap = |target: bool, total: usize| {
        (total > 0).then(|| {
            let verdicts: Vec<Verdict> = pooled_low
                .iter()
                .map(|p| match p.ctx {
                    Some(moving) if moving == target => Some(true),
                    Some(_) => None,
                    None => Some(false),
                })
                .collect();
            ap_ar(&verdicts, total).0
        })
    };

    Metrics3D {
        ap70,
        ap90,
        recall70,
        recall90,
        recall70_movers: (movers_total > 0)
            .then(|| recall_of(movers_matched, movers_total)),
        recall70_static: (static_total > 0)
            .then(|| recall_of(static_matched, static_total)),
        ap70_movers: subset_ap(true, movers_total),
        ap70_static: subset_ap(false, static_total),
        foreground_iou: if union_total == 0 {
            0.0
        } else {
            inter_total as f64 / union_total as f64
        },
        mean_instance_iou: if n_gts == 0 { 0.0 } else { instance_best_sum / n_gts as f64 },
        n_detections,
        n_gts,
    }
}

/// Metrics of one pipeline checkpoint. 2D numbers are absent until a
/// detector has been trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub metrics_2d: Option<Metrics2D>,
    pub metrics_3d: Metrics3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub iterations: Vec<IterationMetrics>,
}

impl EvalReport {
    pub fn new(iterations: Vec<IterationMetrics>) -> Self {
        Self { schema_version: REPORT_SCHEMA_VERSION, iterations }
    }

    /// One row per iteration; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = String::from(
            "iteration,ap50,ar50,ap50_small,ap50_medium,ap50_large,\
             ar50_small,ar50_medium,ar50_large,ap70,ap90,recall70,recall90,\
             recall70_movers,recall70_static,ap70_movers,ap70_static,\
             foreground_iou,mean_instance_iou\n",
        );
        for it in &self.iterations {
            let m2 = it.metrics_2d;
            let m3 = &it.metrics_3d;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                it.iteration,
                cell(m2.map(|m| m.ap50)),
                cell(m2.map(|m| m.ar50)),
                cell(m2.and_then(|m| m.ap50_small)),
                cell(m2.and_then(|m| m.ap50_medium)),
                cell(m2.and_then(|m| m.ap50_large)),
                cell(m2.and_then(|m| m.ar50_small)),
                cell(m2.and_then(|m| m.ar50_medium)),
                cell(m2.and_then(|m| m.ar50_large)),
                m3.ap70,
                m3.ap90,
                m3.recall70,
                m3.recall90,
                cell(m3.recall70_movers),
                cell(m3.recall70_static),
                cell(m3.ap70_movers),
                cell(m3.ap70_static),
                m3.foreground_iou,
                m3.mean_instance_iou,
            ));
        }
        out
    }
}
