//! Alternating-optimization driver. A run starts from motion cues alone:
//! flow-augmented features are clustered per frame, segments whose points
//! predominantly move become the first foreground labels, and the point
//! segmenter trains on them. Every following round alternates an image
//! step (segment boxes train the anchor scorer) with a cloud step
//! (detector boxes, centroid tracks and tracklet voting rewrite the 3D
//! labels, and the segmenter retrains), so evidence keeps crossing
//! between the two views while the object vocabulary grows from movers
//! to everything that looks like one.
//!
//! The per-frame segment universe is built once by clustering and only
//! ever gains segments (static rediscovery inserts them); labels on it
//! evolve each round. Checkpoints, pseudo-label dumps, detections and
//! metric reports are persisted per iteration, and a run can resume from
//! the last completed iteration with bit-identical results.
//!
//! Ground-truth annotations never reach the optimization: steps see only
//! sensor data ([`crate::sim::SensorScene`]), while oracle boxes arrive
//! through a separate argument consumed exclusively by the metric hooks.

pub mod artifacts;

use crate::ckpt::CkptError;
use crate::cluster::{
    assemble_features, cluster_frame, label_foreground, ClusterError, FeatureConfig,
    HdbscanParams, LabeledCloud, MotionLabelConfig,
};
use crate::detect2d::{
    anchor_grid, collect_samples, detect, train_scorer, Detect2dConfig, ImageStats, Sample,
    Scorer,
};
use crate::eval::{
    evaluate_2d, evaluate_3d, gt_3d_instances, EvalReport, Frame2DEval, Frame3DEval,
    IterationMetrics, Metrics2D, Metrics3D, ScoredPointSet,
};
use crate::flow::{read_flow, sequence_nn_flow, write_flow, FlowError};
use crate::fusion::{
    merge_boxes, promote_segments, rediscover_static, segment_boxes_2d, smooth_labels,
    track_centroids, FrameState, FusionConfig, KalmanConfig,
};
use crate::geom::{BBox2D, BBox3D, Calibration};
use crate::prep::{gather, prepare_frame, PrepConfig, PreparedFrame};
use crate::sim::{Mobility, SceneDataset, SensorScene};
use crate::voteseg::{
    compute_features, make_batch, predict,
    train::{train, train_from, TrainFrame},
    SegNet, VotesegConfig,
};
use artifacts::{
    dump_boxes, dump_states, manifest_path, read_json, restore_states, write_json, LabelDump,
    MetricSummary, RunManifest, StepTiming, MANIFEST_SCHEMA_VERSION,
};
use nalgebra::{DMatrix, Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Where per-point flow comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// Nearest-neighbor estimate between consecutive prepared clouds.
    Nn,
    /// Caller-provided flow (an oracle or an external estimator).
    Gt,
    /// Packed flow files dumped by an earlier run.
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Alternating rounds after initialization.
    pub iterations: usize,
    pub flow: FlowMode,
    /// Match gate for nearest-neighbor flow, meters.
    pub flow_max_distance: f64,
    /// Flow root of an earlier run, required in cached mode.
    pub flow_cache: Option<PathBuf>,
    /// Master seed; overrides every nested seed.
    pub seed: u64,
    /// Continue training the previous segmenter instead of retraining
    /// from scratch each round.
    pub fine_tune: bool,
    pub prep: PrepConfig,
    pub features: FeatureConfig,
    pub hdbscan: HdbscanParams,
    pub motion: MotionLabelConfig,
    pub voteseg: VotesegConfig,
    pub detect: Detect2dConfig,
    pub fusion: FusionConfig,
    pub kalman: KalmanConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            flow: FlowMode::Nn,
            flow_max_distance: 2.0,
            flow_cache: None,
            seed: 0,
            fine_tune: false,
            prep: PrepConfig::default(),
            features: FeatureConfig::default(),
            hdbscan: HdbscanParams::default(),
            motion: MotionLabelConfig::default(),
            voteseg: VotesegConfig::default(),
            detect: Detect2dConfig::default(),
            fusion: FusionConfig::default(),
            kalman: KalmanConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("motion cues empty: no frame produced a moving segment")]
    NoMotion,
    #[error("{0}")]
    Input(String),
    #[error("resume mismatch: {0}")]
    Resume(String),
    #[error("numerical failure in {0}")]
    Numerical(&'static str),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Oracle annotations of one frame, consumed only by the metric hooks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOracle {
    pub boxes_2d: Vec<BBox2D>,
    /// Ego-frame boxes keyed by instance id.
    pub boxes_3d: Vec<(u32, BBox3D)>,
    /// Instance ids that actually move over the scene.
    pub movers: BTreeSet<u32>,
}

pub type SceneOracle = Vec<FrameOracle>;

/// Extracts the evaluation view of a generated scene.
pub fn oracle_from_dataset(scene: &SceneDataset) -> SceneOracle {
    scene
        .frames
        .iter()
        .map(|f| FrameOracle {
            boxes_2d: f.gt.boxes2d.iter().map(|(_, b)| *b).collect(),
            boxes_3d: f.gt.boxes3d.clone(),
            movers: f
                .gt
                .mobility
                .iter()
                .filter(|(_, m)| **m == Mobility::Moving)
                .map(|(id, _)| *id)
                .collect(),
        })
        .collect()
}

/// Hex SHA-256 of the serialized effective config; identifies a run's
/// optimization trajectory for resumption.
pub fn config_sha256(cfg: &PipelineConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything derived from one scene's sensor data that the rounds share.
pub(crate) struct SceneWork {
    pub(crate) name: String,
    pub(crate) calib: Calibration,
    pub(crate) prepared: Vec<PreparedFrame>,
    /// Per frame, per kept point, global-frame displacement to the next
    /// frame.
    pub(crate) flows: Vec<Vec<Vector3<f64>>>,
    /// Per frame, the segmenter's input features.
    pub(crate) feats: Vec<DMatrix<f64>>,
    pub(crate) stats: Vec<ImageStats>,
    pub(crate) anchors: Vec<BBox2D>,
    pub(crate) states: Vec<FrameState>,
}

impl SceneWork {
    fn n_frames(&self) -> usize {
        self.prepared.len()
    }

    fn globals(&self) -> Vec<Vec<Point3<f64>>> {
        self.prepared.iter().map(|p| p.global.clone()).collect()
    }

    fn clouds(&self) -> Vec<crate::geom::PointCloud> {
        self.prepared.iter().map(|p| p.cloud.clone()).collect()
    }
}

/// Preprocesses every scene: ground removal, cropping, segmenter
/// features, and (when `with_images`) the image statistics and anchor
/// grid for the detector. Flow is resolved separately.
pub(crate) fn prepare_scenes(
    scenes: &[SensorScene],
    cfg: &PipelineConfig,
    with_images: bool,
) -> Result<Vec<SceneWork>, PipelineError> {
    let mut names = BTreeSet::new();
    for s in scenes {
        if !names.insert(&s.name) {
            return Err(PipelineError::Input(format!("duplicate scene name {:?}", s.name)));
        }
        if s.frames.is_empty() {
            return Err(PipelineError::Input(format!("scene {:?} has no frames", s.name)));
        }
    }
    Ok(scenes
        .iter()
        .map(|scene| {
            let prepared: Vec<PreparedFrame> = scene
                .frames
                .iter()
                .map(|f| prepare_frame(&f.cloud, &f.ego_pose, &cfg.prep))
                .collect();
            let feats: Vec<DMatrix<f64>> =
                prepared.iter().map(|p| compute_features(p.cloud.points())).collect();
            let (stats, anchors) = if with_images {
                let stats: Vec<ImageStats> =
                    scene.frames.iter().map(|f| ImageStats::new(&f.image)).collect();
                let img = &scene.frames[0].image;
                (stats, anchor_grid(img.width, img.height, &cfg.detect))
            } else {
                (Vec::new(), Vec::new())
            };
            SceneWork {
                name: scene.name.clone(),
                calib: scene.calib,
                prepared,
                flows: Vec::new(),
                feats,
                stats,
                anchors,
                states: Vec::new(),
            }
        })
        .collect())
}

/// Fills `work[..].flows` according to the flow mode and, for computed
/// flow, dumps it under `out/flow/` so a later run can replay it.
/// Provided flow is raw-indexed; `scenes` supplies the raw point counts
/// it must match.
pub(crate) fn resolve_flows(
    work: &mut [SceneWork],
    scenes: &[SensorScene],
    gt_flow: Option<&[Vec<Vec<Vector3<f64>>>]>,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<(), PipelineError> {
    match cfg.flow {
        FlowMode::Nn => {
            for w in work.iter_mut() {
                w.flows = sequence_nn_flow(&w.globals(), cfg.flow_max_distance)?;
            }
        }
        FlowMode::Gt => {
            let provided = gt_flow.ok_or_else(|| {
                PipelineError::Input("flow mode gt requires provided flow".into())
            })?;
            if provided.len() != work.len() {
                return Err(PipelineError::Input(format!(
                    "provided flow covers {} scenes, data has {}",
                    provided.len(),
                    work.len()
                )));
            }
            for ((w, scene), scene_flow) in work.iter_mut().zip(scenes).zip(provided) {
                if scene_flow.len() != w.n_frames() {
                    return Err(PipelineError::Input(format!(
                        "scene {:?}: provided flow covers {} frames, data has {}",
                        w.name,
                        scene_flow.len(),
                        w.n_frames()
                    )));
                }
                w.flows = w
                    .prepared
                    .iter()
                    .zip(&scene.frames)
                    .zip(scene_flow)
                    .enumerate()
                    .map(|(f, ((p, frame), raw))| {
                        if raw.len() != frame.cloud.len() {
                            return Err(PipelineError::Input(format!(
                                "scene {:?} frame {f}: provided flow has {} points, raw cloud has {}",
                                w.name,
                                raw.len(),
                                frame.cloud.len()
                            )));
                        }
                        Ok(gather(raw, &p.kept))
                    })
                    .collect::<Result<_, _>>()?;
            }
        }
        FlowMode::Cached => {
            let root = cfg.flow_cache.as_ref().ok_or_else(|| {
                PipelineError::Input("flow mode cached requires flow_cache".into())
            })?;
            for w in work.iter_mut() {
                let mut flows = Vec::with_capacity(w.n_frames());
                for f in 0..w.n_frames() {
                    let flow = read_flow(&artifacts::flow_file(root, &w.name, f))?;
                    if flow.len() != w.prepared[f].kept.len() {
                        return Err(PipelineError::Input(format!(
                            "scene {:?} frame {f}: cached flow has {} points, prepared cloud has {}",
                            w.name,
                            flow.len(),
                            w.prepared[f].kept.len()
                        )));
                    }
                    flows.push(flow);
                }
                w.flows = flows;
            }
        }
    }
    if cfg.flow != FlowMode::Cached {
        if let Some(out) = out_dir {
            let flow_root = out.join("flow");
            for w in work.iter() {
                let dir = flow_root.join(&w.name);
                fs::create_dir_all(&dir)
                    .map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
                for (f, flow) in w.flows.iter().enumerate() {
                    write_flow(&artifacts::flow_file(&flow_root, &w.name, f), flow)?;
                }
            }
        }
    }
    Ok(())
}

/// Builds the initial label state from motion cues and trains the first
/// segmenter on it. Errors when not a single frame yields a moving
/// segment, since nothing downstream could bootstrap from that.
pub(crate) fn initialize(
    work: &mut [SceneWork],
    cfg: &PipelineConfig,
) -> Result<SegNet, PipelineError> {
    let mut any_foreground = false;
    for w in work.iter_mut() {
        let mut states = Vec::with_capacity(w.n_frames());
        for f in 0..w.n_frames() {
            let features =
                assemble_features(&w.prepared[f].cloud, &w.flows[f], &w.calib, &cfg.features)?;
            let segs = cluster_frame(&features, &cfg.hdbscan)?;
            let fg = label_foreground(&segs, &w.flows[f], &cfg.motion)?;
            any_foreground |= !fg.is_empty();
            let labels = LabeledCloud::from_segments(&segs, &fg);
            states.push(FrameState::new(segs, labels));
        }
        w.states = states;
    }
    if !any_foreground {
        return Err(PipelineError::NoMotion);
    }
    Ok(train_segmenter(work, cfg, 0, None)?)
}

/// Trains the segmenter on the current label state of every frame.
/// `salt` separates the rounds' random streams; `base` continues from an
/// existing model instead of reinitializing.
fn train_segmenter(
    work: &[SceneWork],
    cfg: &PipelineConfig,
    salt: u64,
    base: Option<&SegNet>,
) -> Result<SegNet, PipelineError> {
    let frames: Vec<TrainFrame> = work
        .iter()
        .flat_map(|w| {
            w.prepared.iter().zip(&w.feats).zip(&w.states).map(|((p, feats), st)| {
                TrainFrame::from_batch(make_batch(p.cloud.points(), feats, &st.labels))
            })
        })
        .collect();
    let net = match base {
        Some(prev) => {
            let mut net = prev.clone();
            train_from(&mut net, &frames, &cfg.voteseg, salt);
            net
        }
        None => train(&frames, &cfg.voteseg, salt),
    };
    if !net.norm().is_finite() {
        return Err(PipelineError::Numerical("segmenter training"));
    }
    Ok(net)
}

/// Per-round 2D products: the projected pseudo boxes the scorer trained
/// on and the detector output, both per scene per frame.
pub(crate) struct RoundBoxes {
    pub(crate) pseudo: Vec<Vec<Vec<BBox2D>>>,
    pub(crate) detections: Vec<Vec<Vec<BBox2D>>>,
}

/// The image step: the segmenter relabels the segment universe, tracklet
/// voting corrects the labels over time, the surviving foreground
/// segments project to pseudo boxes, and the anchor scorer trains on
/// them. Detections are computed here once and reused by the cloud step.
pub(crate) fn run_2d_step(
    work: &mut [SceneWork],
    net: &SegNet,
    round: usize,
    cfg: &PipelineConfig,
) -> (Scorer, RoundBoxes) {
    for w in work.iter_mut() {
        for f in 0..w.n_frames() {
            let (probs, _) = predict(&w.feats[f], w.prepared[f].cloud.points(), net);
            let mut fg = BTreeSet::new();
            for seg in w.states[f].segments.segments() {
                let hits = seg
                    .point_indices
                    .iter()
                    .filter(|&&i| probs[i] > cfg.voteseg.prob_threshold)
                    .count();
                if hits * 2 > seg.point_indices.len() {
                    fg.insert(seg.id);
                }
            }
            w.states[f].labels = LabeledCloud::from_segments(&w.states[f].segments, &fg);
        }
        let globals = w.globals();
        let clouds = w.clouds();
        smooth_labels(&mut w.states, &globals, &clouds, &w.calib, &cfg.fusion);
    }

    let mut samples: Vec<Sample> = Vec::new();
    let mut pseudo: Vec<Vec<Vec<BBox2D>>> = Vec::new();
    for (s, w) in work.iter().enumerate() {
        let mut scene_pseudo = Vec::with_capacity(w.n_frames());
        for f in 0..w.n_frames() {
            let boxes: Vec<BBox2D> = segment_boxes_2d(
                &w.states[f].segments,
                &w.states[f].labels,
                &w.prepared[f].cloud,
                &w.calib,
                cfg.fusion.min_visible_points,
            )
            .into_iter()
            .map(|(_, b)| b)
            .collect();
            let salt = sample_salt(round, s, f);
            samples.extend(collect_samples(
                &w.stats[f],
                &w.anchors,
                &boxes,
                &cfg.detect,
                cfg.seed,
                salt,
            ));
            scene_pseudo.push(boxes);
        }
        pseudo.push(scene_pseudo);
    }
    let scorer = train_scorer(&samples, &cfg.detect.train, cfg.seed, round as u64);

    let detections: Vec<Vec<Vec<BBox2D>>> = work
        .iter()
        .map(|w| {
            (0..w.n_frames())
                .map(|f| detect(&w.stats[f], &w.anchors, &scorer, &cfg.detect))
                .collect()
        })
        .collect();
    (scorer, RoundBoxes { pseudo, detections })
}

/// One deterministic stream per (round, scene, frame) for anchor
/// subsampling. Desk-scale runs stay far below the field widths.
fn sample_salt(round: usize, scene: usize, frame: usize) -> u64 {
    (round as u64) * 1_000_000 + (scene as u64) * 1_000 + frame as u64
}

/// The cloud step: detector boxes merge with projected segment boxes and
/// promote the segments under them, centroid tracks rediscover static
/// objects the labels missed, tracklet voting smooths the result, and
/// the segmenter retrains on the refreshed labels.
pub(crate) fn run_3d_step(
    work: &mut [SceneWork],
    boxes: &RoundBoxes,
    round: usize,
    cfg: &PipelineConfig,
    previous: &SegNet,
) -> Result<SegNet, PipelineError> {
    for (s, w) in work.iter_mut().enumerate() {
        for f in 0..w.n_frames() {
            let merged =
                merge_boxes(&boxes.pseudo[s][f], &boxes.detections[s][f], cfg.fusion.merge_nms_iou);
            promote_segments(&mut w.states[f], &merged, &w.prepared[f].cloud, &w.calib);
        }
        let globals = w.globals();
        let clouds = w.clouds();
        let per_frame: Vec<Vec<(u32, Point3<f64>)>> = (0..w.n_frames())
            .map(|f| w.states[f].foreground_centroids(&globals[f]))
            .collect();
        let tracks = track_centroids(&per_frame, &cfg.fusion, cfg.kalman);
        rediscover_static(&mut w.states, &globals, &tracks, &cfg.fusion);
        smooth_labels(&mut w.states, &globals, &clouds, &w.calib, &cfg.fusion);
    }
    train_segmenter(work, cfg, round as u64, cfg.fine_tune.then_some(previous))
}

fn eval_2d(
    work: &[SceneWork],
    detections: &[Vec<Vec<BBox2D>>],
    oracle: &[SceneOracle],
) -> Metrics2D {
    let mut frames = Vec::new();
    for (s, w) in work.iter().enumerate() {
        for f in 0..w.n_frames() {
            frames.push(Frame2DEval {
                detections: detections[s][f].clone(),
                gts: oracle[s][f].boxes_2d.clone(),
            });
        }
    }
    evaluate_2d(&frames)
}

/// Scores the current label state against oracle boxes. Segment
/// confidences come from the model: the mean foreground probability of
/// the members.
fn eval_3d(work: &[SceneWork], net: Option<&SegNet>, oracle: &[SceneOracle]) -> Metrics3D {
    let mut frames = Vec::new();
    for (s, w) in work.iter().enumerate() {
        for f in 0..w.n_frames() {
            let points = w.prepared[f].cloud.points();
            let probs = net.map(|n| predict(&w.feats[f], points, n).0);
            let detections: Vec<ScoredPointSet> = w.states[f]
                .segments
                .segments()
                .iter()
                .filter(|seg| w.states[f].labels.y[seg.point_indices[0]])
                .map(|seg| {
                    let score = match &probs {
                        Some(p) => {
                            seg.point_indices.iter().map(|&i| p[i]).sum::<f64>()
                                / seg.point_indices.len() as f64
                        }
                        None => 1.0,
                    };
                    ScoredPointSet { points: seg.point_indices.clone(), score }
                })
                .collect();
            let gts = gt_3d_instances(points, &oracle[s][f].boxes_3d, &oracle[s][f].movers);
            frames.push(Frame3DEval { detections, gts });
        }
    }
    evaluate_3d(&frames)
}

fn validate_oracle(
    scenes: &[SensorScene],
    oracle: Option<&[SceneOracle]>,
) -> Result<(), PipelineError> {
    if let Some(o) = oracle {
        if o.len() != scenes.len() {
            return Err(PipelineError::Input(format!(
                "oracle covers {} scenes, data has {}",
                o.len(),
                scenes.len()
            )));
        }
        for (so, scene) in o.iter().zip(scenes) {
            if so.len() != scene.frames.len() {
                return Err(PipelineError::Input(format!(
                    "scene {:?}: oracle covers {} frames, data has {}",
                    scene.name,
                    so.len(),
                    scene.frames.len()
                )));
            }
        }
    }
    Ok(())
}

pub struct RunOutput {
    /// Present when an oracle was supplied.
    pub report: Option<EvalReport>,
    pub manifest: RunManifest,
}

/// Runs the full loop: initialization plus `iterations` alternating
/// rounds, with artifacts persisted after every step. With `resume`, any
/// iterations already completed in `out_dir` under the same config are
/// restored instead of recomputed; everything else behaves as if the run
/// had never stopped.
pub fn run(
    scenes: &[SensorScene],
    gt_flow: Option<&[Vec<Vec<Vector3<f64>>>]>,
    oracle: Option<&[SceneOracle]>,
    cfg: &PipelineConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<RunOutput, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.voteseg.seed = cfg.seed;
    let hash = config_sha256(&cfg);
    validate_oracle(scenes, oracle)?;
    fs::create_dir_all(out_dir)
        .map_err(|source| PipelineError::Io { path: out_dir.to_path_buf(), source })?;

    let mut work = prepare_scenes(scenes, &cfg, true)?;
    resolve_flows(&mut work, scenes, gt_flow, &cfg, Some(out_dir))?;

    let mut manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: cfg.seed,
        config_sha256: hash.clone(),
        config: cfg.clone(),
        scenes: work.iter().map(|w| w.name.clone()).collect(),
        completed_iterations: Vec::new(),
        timings: Vec::new(),
        metric_summary: Vec::new(),
    };
    let mut rows: Vec<IterationMetrics> = Vec::new();
    let mut net: Option<SegNet> = None;
    let mut start_round = 0usize;

    if resume {
        let prev: RunManifest = read_json(&manifest_path(out_dir)).map_err(|e| {
            PipelineError::Resume(format!("cannot read previous manifest: {e}"))
        })?;
        if prev.config_sha256 != hash {
            return Err(PipelineError::Resume(
                "config differs from the run being resumed".into(),
            ));
        }
        if let Some(done) = last_complete_iteration(out_dir, &work, cfg.iterations)? {
            let dump: LabelDump = read_json(&artifacts::pseudo_3d_path(out_dir, done))?;
            let states = restore_states(&dump, &work).map_err(PipelineError::Resume)?;
            for (w, st) in work.iter_mut().zip(states) {
                w.states = st;
            }
            net = Some(SegNet::load(&artifacts::segmenter_path(out_dir, done))?);
            start_round = done + 1;
            if oracle.is_some() {
                let prev_report: EvalReport =
                    read_json(&artifacts::report_json_path(out_dir)).map_err(|e| {
                        PipelineError::Resume(format!("cannot read previous report: {e}"))
                    })?;
                if prev_report.iterations.len() <= done {
                    return Err(PipelineError::Resume(format!(
                        "previous report has {} rows, iteration {done} is complete",
                        prev_report.iterations.len()
                    )));
                }
                rows = prev_report.iterations[..=done].to_vec();
            }
            manifest.completed_iterations = (0..=done).collect();
            manifest.timings =
                prev.timings.into_iter().filter(|t| t.iteration <= done).collect();
            manifest.metric_summary = prev
                .metric_summary
                .into_iter()
                .filter(|m| m.iteration <= done)
                .collect();
        }
    }

    let mut net = match net {
        Some(n) => n,
        None => {
            let started = Instant::now();
            let n0 = initialize(&mut work, &cfg)?;
            manifest.timings.push(StepTiming {
                iteration: 0,
                step: "initialize".into(),
                wall_ms: started.elapsed().as_millis() as u64,
            });
            n0.save(&artifacts::segmenter_path(out_dir, 0))?;
            write_json(&artifacts::pseudo_3d_path(out_dir, 0), &dump_states(0, &work))?;
            if let Some(o) = oracle {
                let m3 = eval_3d(&work, Some(&n0), o);
                manifest.metric_summary.push(MetricSummary {
                    iteration: 0,
                    ap50: None,
                    ap70: m3.ap70,
                });
                rows.push(IterationMetrics { iteration: 0, metrics_2d: None, metrics_3d: m3 });
                write_report(out_dir, &rows)?;
            }
            manifest.completed_iterations.push(0);
            write_json(&manifest_path(out_dir), &manifest)?;
            n0
        }
    };

    for round in start_round.max(1)..=cfg.iterations {
        let started = Instant::now();
        let (scorer, boxes) = run_2d_step(&mut work, &net, round, &cfg);
        manifest.timings.push(StepTiming {
            iteration: round,
            step: "image step".into(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
        scorer.save(&artifacts::scorer_path(out_dir, round))?;
        write_json(
            &artifacts::pseudo_2d_path(out_dir, round),
            &dump_boxes(round, &work, &boxes.pseudo),
        )?;
        write_json(
            &artifacts::det_2d_path(out_dir, round),
            &dump_boxes(round, &work, &boxes.detections),
        )?;
        let m2 = oracle.map(|o| eval_2d(&work, &boxes.detections, o));

        let started = Instant::now();
        net = run_3d_step(&mut work, &boxes, round, &cfg, &net)?;
        manifest.timings.push(StepTiming {
            iteration: round,
            step: "cloud step".into(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
        net.save(&artifacts::segmenter_path(out_dir, round))?;
        write_json(&artifacts::pseudo_3d_path(out_dir, round), &dump_states(round, &work))?;
        if let Some(o) = oracle {
            let m3 = eval_3d(&work, Some(&net), o);
            manifest.metric_summary.push(MetricSummary {
                iteration: round,
                ap50: m2.map(|m| m.ap50),
                ap70: m3.ap70,
            });
            rows.push(IterationMetrics { iteration: round, metrics_2d: m2, metrics_3d: m3 });
            write_report(out_dir, &rows)?;
        }
        manifest.completed_iterations.push(round);
        write_json(&manifest_path(out_dir), &manifest)?;
    }

    Ok(RunOutput {
        report: oracle.map(|_| EvalReport::new(rows)),
        manifest,
    })
}

fn write_report(out_dir: &Path, rows: &[IterationMetrics]) -> Result<(), PipelineError> {
    let report = EvalReport::new(rows.to_vec());
    write_json(&artifacts::report_json_path(out_dir), &report)?;
    let csv_path = artifacts::report_csv_path(out_dir);
    fs::write(&csv_path, report.to_csv())
        .map_err(|source| PipelineError::Io { path: csv_path, source })
}

/// Highest iteration whose checkpoint and label dump both restore
/// cleanly against the prepared data.
fn last_complete_iteration(
    out_dir: &Path,
    work: &[SceneWork],
    max_iteration: usize,
) -> Result<Option<usize>, PipelineError> {
    for k in (0..=max_iteration).rev() {
        let dump_path = artifacts::pseudo_3d_path(out_dir, k);
        let ckpt_path = artifacts::segmenter_path(out_dir, k);
        if !dump_path.is_file() || !ckpt_path.is_file() {
            continue;
        }
        let dump: LabelDump = read_json(&dump_path)?;
        if dump.iteration != k {
            return Err(PipelineError::Resume(format!(
                "{} claims iteration {}",
                dump_path.display(),
                dump.iteration
            )));
        }
        restore_states(&dump, work).map_err(PipelineError::Resume)?;
        return Ok(Some(k));
    }
    Ok(None)
}

/// Recomputes the metric report of a finished (or partial) run from its
/// persisted artifacts alone: label dumps give the 3D predictions
/// (scored by the iteration's segmenter when its checkpoint exists, 1.0
/// otherwise) and detection dumps give the 2D predictions. On a run
/// directory this reproduces `report.json` exactly.
pub fn evaluate_artifacts(
    scenes: &[SensorScene],
    oracle: &[SceneOracle],
    cfg: &PipelineConfig,
    run_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.voteseg.seed = cfg.seed;
    validate_oracle(scenes, Some(oracle))?;
    let mut work = prepare_scenes(scenes, &cfg, false)?;
    let mut rows = Vec::new();
    for k in 0.. {
        let dump_path = artifacts::pseudo_3d_path(run_dir, k);
        if !dump_path.is_file() {
            break;
        }
        let dump: LabelDump = read_json(&dump_path)?;
        let states = restore_states(&dump, &work).map_err(PipelineError::Resume)?;
        for (w, st) in work.iter_mut().zip(states) {
            w.states = st;
        }
        let ckpt = artifacts::segmenter_path(run_dir, k);
        let net = if ckpt.is_file() { Some(SegNet::load(&ckpt)?) } else { None };
        let metrics_3d = eval_3d(&work, net.as_ref(), oracle);

        let det_path = artifacts::det_2d_path(run_dir, k);
        let metrics_2d = if det_path.is_file() {
            let dump: artifacts::BoxesDump = read_json(&det_path)?;
            let mut detections: Vec<Vec<Vec<BBox2D>>> = Vec::with_capacity(work.len());
            if dump.scenes.len() != work.len() {
                return Err(PipelineError::Input(format!(
                    "{}: detections cover {} scenes, data has {}",
                    det_path.display(),
                    dump.scenes.len(),
                    work.len()
                )));
            }
            for (sd, w) in dump.scenes.iter().zip(&work) {
                if sd.frames.len() != w.n_frames() {
                    return Err(PipelineError::Input(format!(
                        "{}: scene {:?} has {} frames of detections, data has {}",
                        det_path.display(),
                        sd.name,
                        sd.frames.len(),
                        w.n_frames()
                    )));
                }
                let frames: Result<Vec<Vec<BBox2D>>, PipelineError> = sd
                    .frames
                    .iter()
                    .map(|bs| {
                        bs.iter()
                            .map(|b| b.to_box().map_err(PipelineError::Input))
                            .collect()
                    })
                    .collect();
                detections.push(frames?);
            }
            Some(eval_2d(&work, &detections, oracle))
        } else {
            None
        };
        rows.push(IterationMetrics { iteration: k, metrics_2d, metrics_3d });
    }
    if rows.is_empty() {
        return Err(PipelineError::Input(format!(
            "{}: no label dumps found",
            run_dir.display()
        )));
    }
    Ok(EvalReport::new(rows))
}
