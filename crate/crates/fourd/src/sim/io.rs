//! On-disk dataset layout, bit-exact in both directions.
//!
//! A scene directory holds:
//!
//! - `manifest.json`: frame ids plus an optional spec echo
//! - `calib.txt`: camera intrinsics and the ego-to-camera transform
//! - `poses.txt`: one line per frame, `id` plus 12 row-major numbers
//! - `cloud_%06d.bin`: little-endian f32 xyz triples, ego frame
//! - `image_%06d.ppm`: binary P6, maxval 255
//! - `gt_%06d.json`: per-point annotations and boxes
//!
//! A suite directory holds `suite_manifest.json` plus one subdirectory
//! per scene.

use super::{
    FrameGt, FrameRecord, Image, Mobility, SceneDataset, SceneSpec, SimError, SensorScene,
};
use crate::geom::{
    read_calibration, write_calibration, BBox2D, BBox3D, Frame, PointCloud, RigidTransform,
};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneManifest {
    format_version: u32,
    name: String,
    frame_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<SceneSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteManifest {
    format_version: u32,
    scenes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtFile {
    instance_ids: Vec<u32>,
    flow: Vec<[f64; 3]>,
    boxes2d: Vec<GtBox2D>,
    boxes3d: Vec<GtBox3D>,
    mobility: BTreeMap<u32, Mobility>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtBox2D {
    id: u32,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtBox3D {
    id: u32,
    min: [f64; 3],
    max: [f64; 3],
}

fn io_err(ctx: &str, e: impl std::fmt::Display) -> SimError {
    SimError::Io(format!("{ctx}: {e}"))
}

fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), SimError> {
    let mut buf = Vec::with_capacity(cloud.len() * 12);
    for p in cloud.points() {
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(&path.display().to_string(), e))
}

fn read_cloud(path: &Path, frame_id: u64) -> Result<PointCloud, SimError> {
    let buf = fs::read(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    if buf.len() % 12 != 0 {
        return Err(SimError::Format(format!(
            "{}: byte length {} is not a multiple of 12",
            path.display(),
            buf.len()
        )));
    }
    let mut points = Vec::with_capacity(buf.len() / 12);
    for chunk in buf.chunks_exact(12) {
        let x = f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(chunk[8..12].try_into().unwrap()) as f64;
        points.push(Point3::new(x, y, z));
    }
    PointCloud::new(frame_id, Frame::Ego, points).map_err(SimError::Geom)
}

fn write_ppm(path: &Path, img: &Image) -> Result<(), SimError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    f.write_all(header.as_bytes())
        .and_then(|_| f.write_all(&img.data))
        .map_err(|e| io_err(&path.display().to_string(), e))
}

fn read_ppm(path: &Path) -> Result<Image, SimError> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io_err(&path.display().to_string(), e))?;
    // Header: three whitespace-separated tokens after the magic, then one
    // whitespace byte, then raw data.
    if !buf.starts_with(b"P6") {
        return Err(SimError::Format(format!("{}: not a binary PPM", path.display())));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < buf.len() && (buf[pos] as char).is_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !(buf[pos] as char).is_whitespace() {
            pos += 1;
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SimError::Format(format!("{}: bad PPM header", path.display())))?;
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(SimError::Format(format!("{}: expected maxval 255", path.display())));
    }
    let need = w * h * 3;
    if buf.len() - pos != need {
        return Err(SimError::Format(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            need,
            buf.len() - pos
        )));
    }
    Ok(Image { width: w as u32, height: h as u32, data: buf[pos..].to_vec() })
}

fn write_poses(path: &Path, frames: &[FrameRecord]) -> Result<(), SimError> {
    let mut out = String::from("# frame_id r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz\n");
    for f in frames {
        out.push_str(&f.frame_id.to_string());
        for v in f.ego_pose.to_row_major() {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(&path.display().to_string(), e))
}

fn read_poses(path: &Path) -> Result<BTreeMap<u64, RigidTransform>, SimError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: u64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SimError::Format(format!("{}:{}: bad frame id", path.display(), lineno + 1)))?;
        let vals: Vec<f64> = it.map(|s| s.parse()).collect::<Result<_, _>>().map_err(|e| {
            SimError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if vals.len() != 12 {
            return Err(SimError::Format(format!(
                "{}:{}: expected 12 numbers, found {}",
                path.display(),
                lineno + 1,
                vals.len()
            )));
        }
        let mut m = [0.0; 12];
        m.copy_from_slice(&vals);
        out.insert(
            id,
            RigidTransform::from_row_major(&m)
                .map_err(|e| SimError::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
        );
    }
    Ok(out)
}

fn gt_to_file(gt: &FrameGt) -> GtFile {
    GtFile {
        instance_ids: gt.instance_ids.clone(),
        flow: gt.flow.iter().map(|v| [v.x, v.y, v.z]).collect(),
        boxes2d: gt
            .boxes2d
            .iter()
            .map(|(id, b)| GtBox2D { id: *id, x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 })
            .collect(),
        boxes3d: gt
            .boxes3d
            .iter()
            .map(|(id, b)| GtBox3D { id: *id, min: b.min, max: b.max })
            .collect(),
        mobility: gt.mobility.clone(),
    }
}

fn gt_from_file(f: GtFile, n_points: usize, path: &Path) -> Result<FrameGt, SimError> {
    if f.instance_ids.len() != n_points || f.flow.len() != n_points {
        return Err(SimError::Format(format!(
            "{}: annotation length mismatch (cloud has {} points, ids {}, flow {})",
            path.display(),
            n_points,
            f.instance_ids.len(),
            f.flow.len()
        )));
    }
    let mut boxes2d = Vec::with_capacity(f.boxes2d.len());
    for b in f.boxes2d {
        boxes2d.push((
            b.id,
            BBox2D::new(b.x1, b.y1, b.x2, b.y2, 1.0)
                .map_err(|e| SimError::Format(format!("{}: {e}", path.display())))?,
        ));
    }
    let mut boxes3d = Vec::with_capacity(f.boxes3d.len());
    for b in f.boxes3d {
        boxes3d.push((
            b.id,
            BBox3D::new(b.min, b.max)
                .map_err(|e| SimError::Format(format!("{}: {e}", path.display())))?,
        ));
    }
    Ok(FrameGt {
        instance_ids: f.instance_ids,
        flow: f.flow.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect(),
        boxes2d,
        boxes3d,
        mobility: f.mobility,
    })
}

/// Writes one scene under `dir` (created if absent).
pub fn export_scene(dir: &Path, scene: &SceneDataset) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| io_err(&dir.display().to_string(), e))?;
    let manifest = SceneManifest {
        format_version: FORMAT_VERSION,
        name: scene.name.clone(),
        frame_ids: scene.frames.iter().map(|f| f.frame_id).collect(),
        spec: scene.spec.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SimError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json).map_err(|e| io_err("manifest.json", e))?;
    write_calibration(&scene.calib, &dir.join("calib.txt"))
        .map_err(|e| SimError::Io(e.to_string()))?;
    write_poses(&dir.join("poses.txt"), &scene.frames)?;
    for f in &scene.frames {
        write_cloud(&dir.join(format!("cloud_{:06}.bin", f.frame_id)), &f.cloud)?;
        write_ppm(&dir.join(format!("image_{:06}.ppm", f.frame_id)), &f.image)?;
        let gt = serde_json::to_string(&gt_to_file(&f.gt))
            .map_err(|e| SimError::Format(e.to_string()))?;
        fs::write(dir.join(format!("gt_{:06}.json", f.frame_id)), gt)
            .map_err(|e| io_err("gt json", e))?;
    }
    Ok(())
}

/// Reads a scene directory written by [`export_scene`].
pub fn import_scene(dir: &Path) -> Result<SceneDataset, SimError> {
    let manifest_path = dir.join("manifest.json");
    let text =
        fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path.display().to_string(), e))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| SimError::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(SimError::Format(format!(
            "{}: unsupported format version {}",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    let calib = read_calibration(&dir.join("calib.txt")).map_err(|e| SimError::Io(e.to_string()))?;
    let poses = read_poses(&dir.join("poses.txt"))?;
    let mut frames = Vec::with_capacity(manifest.frame_ids.len());
    for &id in &manifest.frame_ids {
        let cloud_path = dir.join(format!("cloud_{id:06}.bin"));
        if !cloud_path.exists() {
            return Err(SimError::Format(format!(
                "scene '{}': frame {} listed in manifest but {} is missing",
                manifest.name,
                id,
                cloud_path.display()
            )));
        }
        let cloud = read_cloud(&cloud_path, id)?;
        let image = read_ppm(&dir.join(format!("image_{id:06}.ppm")))?;
        let gt_path = dir.join(format!("gt_{id:06}.json"));
        let gt_text =
            fs::read_to_string(&gt_path).map_err(|e| io_err(&gt_path.display().to_string(), e))?;
        let gt_file: GtFile = serde_json::from_str(&gt_text)
            .map_err(|e| SimError::Format(format!("{}: {e}", gt_path.display())))?;
        let gt = gt_from_file(gt_file, cloud.len(), &gt_path)?;
        let ego_pose = *poses.get(&id).ok_or_else(|| {
            SimError::Format(format!("scene '{}': frame {} missing from poses.txt", manifest.name, id))
        })?;
        frames.push(FrameRecord { frame_id: id, cloud, image, ego_pose, gt });
    }
    Ok(SceneDataset { name: manifest.name, calib, frames, spec: manifest.spec })
}

/// Writes a suite: `suite_manifest.json` plus `scene_%03d/` per scene.
pub fn export_suite(dir: &Path, scenes: &[SceneDataset]) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| io_err(&dir.display().to_string(), e))?;
    let names: Vec<String> = (0..scenes.len()).map(|i| format!("scene_{i:03}")).collect();
    let manifest = SuiteManifest { format_version: FORMAT_VERSION, scenes: names.clone() };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| SimError::Format(e.to_string()))?;
    fs::write(dir.join("suite_manifest.json"), json)
        .map_err(|e| io_err("suite_manifest.json", e))?;
    for (scene, name) in scenes.iter().zip(&names) {
        export_scene(&dir.join(name), scene)?;
    }
    Ok(())
}

/// Reads a suite directory written by [`export_suite`].
pub fn import_suite(dir: &Path) -> Result<Vec<SceneDataset>, SimError> {
    let manifest_path = dir.join("suite_manifest.json");
    let text =
        fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path.display().to_string(), e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text)
        .map_err(|e| SimError::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(SimError::Format(format!(
            "{}: unsupported format version {}",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    manifest.scenes.iter().map(|name| import_scene(&dir.join(name))).collect()
}

/// Sensor-only view of every scene in a suite, paired with nothing else:
/// the discovery pipeline input.
pub fn sensor_views(scenes: &[SceneDataset]) -> Vec<SensorScene> {
    scenes.iter().map(|s| s.sensor_view()).collect()
}
