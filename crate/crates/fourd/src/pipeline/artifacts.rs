//! On-disk layout of a discovery run: pseudo-label dumps, the run
//! manifest, and the validation applied when restoring state from them.
//!
//! Everything is plain JSON except flow caches (packed f32 triples) and
//! model checkpoints, which have their own binary format. Dumps carry a
//! schema version so stale artifacts fail loudly instead of silently.

use super::{PipelineConfig, PipelineError, SceneWork};
use crate::cluster::{FrameSegments, LabeledCloud, Segment};
use crate::fusion::FrameState;
use crate::geom::BBox2D;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub const DUMP_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn segmenter_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("segmenter_iter{iteration}.ckpt"))
}

pub fn scorer_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("scorer_iter{iteration}.ckpt"))
}

pub fn pseudo_3d_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("pseudo_3d_iter{iteration}.json"))
}

pub fn pseudo_2d_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("pseudo_2d_iter{iteration}.json"))
}

pub fn det_2d_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("det_2d_iter{iteration}.json"))
}

pub fn report_json_path(out: &Path) -> PathBuf {
    out.join("report.json")
}

pub fn report_csv_path(out: &Path) -> PathBuf {
    out.join("report.csv")
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("run_manifest.json")
}

/// Flow cache file of one frame under a flow root (a run's `flow/` dir).
pub fn flow_file(flow_root: &Path, scene: &str, frame: usize) -> PathBuf {
    flow_root.join(scene).join(format!("frame_{frame:04}.bin"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let file = fs::File::create(path)
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let file = fs::File::open(path)
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })
}

/// One segment of a label dump; `points` are ascending prepared-cloud
/// indices and `foreground` is the segment-level label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDump {
    pub id: u32,
    pub foreground: bool,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabelDump {
    pub n_points: usize,
    pub segments: Vec<SegmentDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabelDump {
    pub name: String,
    pub frames: Vec<FrameLabelDump>,
}

/// Full 3D label state of one iteration; restoring it reproduces the
/// in-memory state exactly, which is what makes resumption equivalent
/// to an uninterrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDump {
    pub schema_version: u32,
    pub iteration: usize,
    pub scenes: Vec<SceneLabelDump>,
}

pub(crate) fn dump_states(iteration: usize, work: &[SceneWork]) -> LabelDump {
    LabelDump {
        schema_version: DUMP_SCHEMA_VERSION,
        iteration,
        scenes: work
            .iter()
            .map(|w| SceneLabelDump {
                name: w.name.clone(),
                frames: w
                    .states
                    .iter()
                    .map(|st| FrameLabelDump {
                        n_points: st.segments.n_points(),
                        segments: st
                            .segments
                            .segments()
                            .iter()
                            .map(|seg| SegmentDump {
                                id: seg.id,
                                foreground: st.labels.y[seg.point_indices[0]],
                                points: seg.point_indices.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Rebuilds per-frame states from a dump, validating it against the
/// prepared scenes. Any disagreement means the dump belongs to different
/// data and is rejected.
pub(crate) fn restore_states(dump: &LabelDump, work: &[SceneWork]) -> Result<Vec<Vec<FrameState>>, String> {
    if dump.schema_version != DUMP_SCHEMA_VERSION {
        return Err(format!("label dump schema {} unsupported", dump.schema_version));
    }
    if dump.scenes.len() != work.len() {
        return Err(format!(
            "label dump has {} scenes, data has {}",
            dump.scenes.len(),
            work.len()
        ));
    }
    let mut out = Vec::with_capacity(work.len());
    for (sd, w) in dump.scenes.iter().zip(work) {
        if sd.name != w.name {
            return Err(format!("label dump scene {:?} does not match {:?}", sd.name, w.name));
        }
        if sd.frames.len() != w.prepared.len() {
            return Err(format!(
                "scene {:?}: dump has {} frames, data has {}",
                sd.name,
                sd.frames.len(),
                w.prepared.len()
            ));
        }
        let mut states = Vec::with_capacity(sd.frames.len());
        for (f, fd) in sd.frames.iter().enumerate() {
            let expected = w.prepared[f].cloud.len();
            if fd.n_points != expected {
                return Err(format!(
                    "scene {:?} frame {f}: dump has {} points, prepared cloud has {expected}",
                    sd.name, fd.n_points
                ));
            }
            let segments: Vec<Segment> = fd
                .segments
                .iter()
                .map(|s| Segment { id: s.id, point_indices: s.points.clone() })
                .collect();
            let segs = FrameSegments::new(fd.n_points, segments)
                .map_err(|e| format!("scene {:?} frame {f}: {e}", sd.name))?;
            let fg: BTreeSet<u32> =
                fd.segments.iter().filter(|s| s.foreground).map(|s| s.id).collect();
            let labels = LabeledCloud::from_segments(&segs, &fg);
            states.push(FrameState::new(segs, labels));
        }
        out.push(states);
    }
    Ok(out)
}

/// A box in a dump file. Written from validated boxes; reading one back
/// re-validates through the box constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDump {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl From<&BBox2D> for BoxDump {
    fn from(b: &BBox2D) -> Self {
        Self { x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2, score: b.score }
    }
}

impl BoxDump {
    pub fn to_box(self) -> Result<BBox2D, String> {
        BBox2D::new(self.x1, self.y1, self.x2, self.y2, self.score).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBoxesDump {
    pub name: String,
    pub frames: Vec<Vec<BoxDump>>,
}

/// Per-frame 2D boxes of one iteration: either the projected pseudo
/// boxes the image scorer trained on, or the detector's own output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxesDump {
    pub schema_version: u32,
    pub iteration: usize,
    pub scenes: Vec<SceneBoxesDump>,
}

pub(crate) fn dump_boxes(iteration: usize, work: &[SceneWork], boxes: &[Vec<Vec<BBox2D>>]) -> BoxesDump {
    BoxesDump {
        schema_version: DUMP_SCHEMA_VERSION,
        iteration,
        scenes: work
            .iter()
            .zip(boxes)
            .map(|(w, frames)| SceneBoxesDump {
                name: w.name.clone(),
                frames: frames
                    .iter()
                    .map(|bs| bs.iter().map(BoxDump::from).collect())
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub iteration: usize,
    pub step: String,
    pub wall_ms: u64,
}

/// Headline numbers per iteration, mirrored from the report so a glance
/// at the manifest tells whether a run went anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub iteration: usize,
    pub ap50: Option<f64>,
    pub ap70: f64,
}

/// Everything needed to reproduce a run and audit its progress. Wall
/// times vary between runs; reports and checkpoints do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub config: PipelineConfig,
    pub scenes: Vec<String>,
    pub completed_iterations: Vec<usize>,
    pub timings: Vec<StepTiming>,
    pub metric_summary: Vec<MetricSummary>,
}
