//! Image-space object detector trained on projected pseudo boxes.
//!
//! A fixed grid of anchor boxes covers the image; each anchor is scored
//! by a logistic model over patch-statistics descriptors. Training
//! assigns anchors to pseudo boxes by IoU under a configurable sampling
//! strategy, subsamples negatives at a fixed ratio, and fits the scorer
//! with early stopping. Detection scores every anchor and applies greedy
//! non-maximum suppression.

pub mod descriptor;
mod scorer;

pub use descriptor::{ImageStats, DESC_DIM};
pub use scorer::{train_scorer, Sample, Scorer, ScorerTrainConfig};

use crate::geom::{bbox2d_iou, BBox2D};
use crate::rng::{rng_for, Stream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detect2dConfig {
    pub stride: u32,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub sampling: Sampling,
    pub negatives_per_positive: usize,
    pub train: ScorerTrainConfig,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for Detect2dConfig {
    fn default() -> Self {
        Self {
            stride: 8,
            scales: vec![12.0, 17.0, 24.0, 34.0, 48.0, 68.0],
            ratios: vec![0.5, 1.0, 2.0],
            sampling: Sampling::HardNegativeBand,
            negatives_per_positive: 3,
            train: ScorerTrainConfig::default(),
            score_threshold: 0.01,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

/// How anchors become positive / negative training samples from their
/// best IoU against the frame's pseudo boxes. Anchors matching neither
/// rule are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Positive at IoU >= 0.7, negative below 0.3. Far-away background
    /// (IoU near zero) trains as negative.
    WideMargin,
    /// Positive at IoU >= 0.6, negative below 0.4.
    NarrowMargin,
    /// Positive strictly above 0.6; negatives only from the band
    /// (0.1, 0.4), so background with no overlap at all is ignored.
    HardNegativeBand,
}

impl Sampling {
    /// `Some(true)` = positive, `Some(false)` = negative, `None` = ignore.
    pub fn assign(&self, max_iou: f64) -> Option<bool> {
        match self {
            Sampling::WideMargin => {
                if max_iou >= 0.7 {
                    Some(true)
                } else if max_iou < 0.3 {
                    Some(false)
                } else {
                    None
                }
            }
            Sampling::NarrowMargin => {
                if max_iou >= 0.6 {
                    Some(true)
                } else if max_iou < 0.4 {
                    Some(false)
                } else {
                    None
                }
            }
            Sampling::HardNegativeBand => {
                if max_iou > 0.6 {
                    Some(true)
                } else if max_iou > 0.1 && max_iou < 0.4 {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }
}

/// The fixed anchor set for an image size: one cell per stride step, all
/// scale x ratio shapes per cell, clipped to the image. Order is row
/// major by cell, then scales, then ratios; this index is the NMS and
/// subsampling tie-break order.
pub fn anchor_grid(width: u32, height: u32, cfg: &Detect2dConfig) -> Vec<BBox2D> {
    let mut anchors = Vec::new();
    let s = cfg.stride as f64;
    for cy in 0..height / cfg.stride {
        for cx in 0..width / cfg.stride {
            let x = (cx as f64 + 0.5) * s;
            let y = (cy as f64 + 0.5) * s;
            for &scale in &cfg.scales {
                for &ratio in &cfg.ratios {
                    let w = scale * ratio.sqrt();
                    let h = scale / ratio.sqrt();
                    let raw = BBox2D {
                        x1: x - w / 2.0,
                        y1: y - h / 2.0,
                        x2: x + w / 2.0,
                        y2: y + h / 2.0,
                        score: 1.0,
                    };
                    if let Some(clipped) = raw.clipped(width, height) {
                        anchors.push(clipped);
                    }
                }
            }
        }
    }
    anchors
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorAssignment {
    /// Ascending anchor indices labeled positive.
    pub positives: Vec<usize>,
    /// Ascending anchor indices labeled negative, before subsampling.
    pub negatives: Vec<usize>,
}

/// Labels anchors against pseudo boxes. Besides the strategy rule, the
/// best-IoU anchor of every pseudo box (ties to the lower index) is
/// forced positive so no box goes unrepresented.
pub fn assign_anchors(
    anchors: &[BBox2D],
    pseudo: &[BBox2D],
    sampling: Sampling,
) -> AnchorAssignment {
    if pseudo.is_empty() {
        return AnchorAssignment { positives: Vec::new(), negatives: Vec::new() };
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut best_per_box = vec![(0usize, -1.0f64); pseudo.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        let mut max_iou: f64 = 0.0;
        for (bi, b) in pseudo.iter().enumerate() {
            let iou = bbox2d_iou(anchor, b);
            max_iou = max_iou.max(iou);
            if iou > best_per_box[bi].1 {
                best_per_box[bi] = (ai, iou);
            }
        }
        match sampling.assign(max_iou) {
            Some(true) => positives.push(ai),
            Some(false) => negatives.push(ai),
            None => {}
        }
    }
    for &(ai, _) in &best_per_box {
        if let Err(pos) = positives.binary_search(&ai) {
            positives.insert(pos, ai);
        }
        if let Ok(pos) = negatives.binary_search(&ai) {
            negatives.remove(pos);
        }
    }
    AnchorAssignment { positives, negatives }
}

/// Keeps all positives and a seeded subsample of negatives at the
/// configured ratio. Frames without positives yield nothing.
pub fn subsample_assignment(
    assignment: &AnchorAssignment,
    negatives_per_positive: usize,
    seed: u64,
    salt: u64,
) -> (Vec<usize>, Vec<usize>) {
    if assignment.positives.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let want = assignment.positives.len() * negatives_per_positive;
    let negatives = if assignment.negatives.len() <= want {
        assignment.negatives.clone()
    } else {
        let mut rng = rng_for(seed, Stream::AnchorSubsample, salt);
        let mut picks =
            rand::seq::index::sample(&mut rng, assignment.negatives.len(), want).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|k| assignment.negatives[k]).collect()
    };
    (assignment.positives.clone(), negatives)
}

/// Builds labeled descriptor samples for one frame. Descriptors are only
/// extracted for the anchors that survive subsampling.
pub fn collect_samples(
    stats: &ImageStats,
    anchors: &[BBox2D],
    pseudo: &[BBox2D],
    cfg: &Detect2dConfig,
    seed: u64,
    salt: u64,
) -> Vec<Sample> {
    let assignment = assign_anchors(anchors, pseudo, cfg.sampling);
    let (pos, neg) = subsample_assignment(&assignment, cfg.negatives_per_positive, seed, salt);
    let mut out = Vec::with_capacity(pos.len() + neg.len());
    for (&ai, positive) in pos.iter().map(|a| (a, true)).chain(neg.iter().map(|a| (a, false))) {
        let a = &anchors[ai];
        out.push(Sample { descriptor: stats.descriptor(a.x1, a.y1, a.x2, a.y2), positive });
    }
    out
}

/// Scores every anchor and returns the surviving boxes after greedy NMS:
/// candidates above the score threshold, highest score first (ties to the
/// lower anchor index), suppressing IoU strictly above `nms_iou`, capped
/// at `max_detections`.
pub fn detect(
    stats: &ImageStats,
    anchors: &[BBox2D],
    scorer: &Scorer,
    cfg: &Detect2dConfig,
) -> Vec<BBox2D> {
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for (ai, a) in anchors.iter().enumerate() {
        let score = scorer.score(&stats.descriptor(a.x1, a.y1, a.x2, a.y2));
        if score > cfg.score_threshold {
            candidates.push((ai, score));
        }
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut kept: Vec<BBox2D> = Vec::new();
    for (ai, score) in candidates {
        if kept.len() >= cfg.max_detections {
            break;
        }
        let candidate = anchors[ai].with_score(score).expect("score from sigmoid");
        if kept.iter().all(|k| bbox2d_iou(k, &candidate) <= cfg.nms_iou) {
            kept.push(candidate);
        }
    }
    kept
}
