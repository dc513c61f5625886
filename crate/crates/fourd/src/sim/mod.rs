//! Deterministic synthetic scene generator: LiDAR-like point clouds,
//! camera images and oracle annotations for cuboid objects moving over a
//! ground plane.
//!
//! Determinism and exactness rules, load-bearing for the rest of the
//! crate:
//!
//! - Every random quantity derives from `(seed, purpose, index)` streams or
//!   from per-item hashes; regenerating a spec reproduces the dataset
//!   bit for bit.
//! - All generated coordinates are quantized to a dyadic grid (multiples
//!   of 2^-10 m) small enough that an f32 represents them exactly, so the
//!   float32 cloud files round-trip exactly and ego compensation of
//!   static geometry cancels exactly in f64 arithmetic (given dyadic
//!   trajectories, the default in the bundled suites).
//! - Each object owns a fixed set of canonical surface samples reused in
//!   every frame; per-frame visibility (range falloff, dropout) selects
//!   subsets but never moves a sample on the surface. Ground-truth flow of
//!   a moving object's point is the displacement of its canonical sample
//!   between consecutive frames; static objects and ground carry exactly
//!   zero flow. The last frame uses the backward difference.
//! - Images are rendered far-to-near (painter's order) with hash-based
//!   per-pixel noise, then quantized to 8-bit, so the PPM files also
//!   round-trip exactly.

mod io;
mod render;
pub mod suite;

pub use io::{export_scene, export_suite, import_scene, import_suite, sensor_views};
pub use render::Image;

use crate::geom::{
    bbox3d_iou, project_to_image, BBox2D, BBox3D, Calibration, CameraIntrinsics, Frame,
    PointCloud, RigidTransform,
};
use crate::rng::{rng_for, Stream};
use nalgebra::{Matrix3, Point3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene '{scene}': duplicate object id {id}")]
    DuplicateObjectId { scene: String, id: u32 },
    #[error("scene '{scene}': object {id} has a non-positive size component")]
    BadSize { scene: String, id: u32 },
    #[error("scene '{scene}': object ids must be >= 1")]
    ZeroObjectId { scene: String },
    #[error("scene '{scene}': moving object {id} never displaces at least {min} m in one frame")]
    MoverTooSlow { scene: String, id: u32, min: f64 },
    #[error("scene '{scene}': static object {id} moves at frame {frame}")]
    StaticMoves { scene: String, id: u32, frame: u64 },
    #[error("scene '{scene}': objects {a} and {b} overlap at frame {frame}")]
    ObjectOverlap { scene: String, a: u32, b: u32, frame: u64 },
    #[error("scene '{scene}': needs at least one frame")]
    NoFrames { scene: String },
    #[error("scene '{scene}': trajectory of object {id} shorter than frame count")]
    ShortTrajectory { scene: String, id: u32 },
    #[error("dataset io: {0}")]
    Io(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Mobility class of an object: `Moving` objects must displace at least
/// 0.1 m in some single frame interval; `Static` objects never move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    Moving,
    Static,
}

/// Pose per frame. `Linear` is translation-only constant velocity, the
/// form used by the bundled suites because it keeps dyadic coordinates
/// dyadic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Fixed { position: [f64; 3] },
    Linear { start: [f64; 3], velocity: [f64; 3] },
    Poses { poses: Vec<RigidTransform> },
}

impl Trajectory {
    pub fn pose_at(&self, t: u64) -> RigidTransform {
        match self {
            Trajectory::Fixed { position } => {
                RigidTransform::from_translation(Vector3::from(*position))
            }
            Trajectory::Linear { start, velocity } => {
                let s = Vector3::from(*start);
                let v = Vector3::from(*velocity);
                RigidTransform::from_translation(s + v * t as f64)
            }
            Trajectory::Poses { poses } => poses[(t as usize).min(poses.len() - 1)],
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            Trajectory::Poses { poses } => Some(poses.len()),
            _ => None,
        }
    }
}

/// Visual appearance: a base color plus per-pixel texture noise. Colors
/// are assigned per appearance class, never per mobility class, so a
/// parked object can look exactly like a moving one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub base_color: [f64; 3],
    pub texture_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    /// Full cuboid extents (x, y, z), meters.
    pub size: [f64; 3],
    pub mobility: Mobility,
    /// Trajectory of the cuboid center.
    pub trajectory: Trajectory,
    pub appearance: Appearance,
}

/// Ground plane extent and clutter density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// Ground points per square meter at the sensor reference range.
    pub density: f64,
    pub base_color: [f64; 3],
    pub image_noise: f64,
}

/// Sampling model of the range sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    /// Surface samples per square meter at `ref_range`.
    pub object_density: f64,
    /// Range at which densities are specified; density falls off as
    /// `(ref_range / range)^2` and never exceeds 1.
    pub ref_range: f64,
    pub max_points_per_object: usize,
    /// Std-dev of additive position noise, meters. 0 disables it.
    pub noise_sigma: f64,
    /// Probability of dropping an otherwise visible sample. 0 disables it.
    pub dropout: f64,
    /// When set, surfaces are sampled on a regular lattice of this spacing
    /// instead of uniformly at random.
    pub grid_spacing: Option<f64>,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            object_density: 26.0,
            ref_range: 15.0,
            max_points_per_object: 420,
            noise_sigma: 0.0,
            dropout: 0.0,
            grid_spacing: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera center height above the ego origin, meters.
    pub mount_height: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { fx: 200.0, fy: 200.0, cx: 192.0, cy: 128.0, width: 384, height: 256, mount_height: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub frames: u32,
    pub seed: u64,
    pub ego: Trajectory,
    pub objects: Vec<ObjectSpec>,
    pub background: BackgroundSpec,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub camera: CameraSpec,
}

/// Minimum one-frame displacement that makes an object count as moving.
pub const MIN_MOVER_DISPLACEMENT: f64 = 0.1;

/// Oracle annotations for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGt {
    /// Per cloud point: owning object id, 0 for ground.
    pub instance_ids: Vec<u32>,
    /// Per cloud point: global-frame flow, m/frame.
    pub flow: Vec<Vector3<f64>>,
    pub boxes2d: Vec<(u32, BBox2D)>,
    pub boxes3d: Vec<(u32, BBox3D)>,
    pub mobility: BTreeMap<u32, Mobility>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    /// Ego-frame cloud; coordinates are exactly f32-representable.
    pub cloud: PointCloud,
    pub image: Image,
    /// Ego to global.
    pub ego_pose: RigidTransform,
    pub gt: FrameGt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub name: String,
    pub calib: Calibration,
    pub frames: Vec<FrameRecord>,
    /// Echo of the generating spec when known.
    pub spec: Option<SceneSpec>,
}

/// Sensor-only view of a frame: what the discovery pipeline is allowed to
/// see. Constructed by [`SceneDataset::sensor_view`]; carries no oracle
/// fields at all.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub frame_id: u64,
    pub cloud: PointCloud,
    pub image: Image,
    pub ego_pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorScene {
    pub name: String,
    pub calib: Calibration,
    pub frames: Vec<SensorFrame>,
}

impl SceneDataset {
    pub fn sensor_view(&self) -> SensorScene {
        SensorScene {
            name: self.name.clone(),
            calib: self.calib,
            frames: self
                .frames
                .iter()
                .map(|f| SensorFrame {
                    frame_id: f.frame_id,
                    cloud: f.cloud.clone(),
                    image: f.image.clone(),
                    ego_pose: f.ego_pose,
                })
                .collect(),
        }
    }

    /// Global-frame ground truth flow of a frame, per cloud point.
    pub fn gt_flow(&self, frame_index: usize) -> &[Vector3<f64>] {
        &self.frames[frame_index].gt.flow
    }
}

/// Quantizes to the dyadic grid every generated coordinate lives on.
pub(crate) fn quantize(x: f64) -> f64 {
    (x * 1024.0).round() / 1024.0
}

/// Forces exact f32 representability (a no-op for on-grid values in range).
pub(crate) fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

/// Deterministic hash of a tag list to a uniform value in [0, 1).
pub(crate) fn unit_hash(tags: &[u64]) -> f64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &t in tags {
        h ^= t.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// One canonical surface sample of an object, in the object's local frame
/// (origin at the cuboid center).
#[derive(Debug, Clone, Copy)]
struct SurfaceSample {
    local: Vector3<f64>,
    /// Fixed visibility rank in [0, 1): the sample is present at a frame
    /// when `rank <= density_factor(range)`.
    rank: f64,
}

fn cuboid_faces(size: [f64; 3]) -> [(Vector3<f64>, Vector3<f64>, Vector3<f64>, f64); 5] {
    let [sx, sy, sz] = size;
    let h = |v: f64| v / 2.0;
    // (origin corner, edge u, edge v, area): top, +x, -x, +y, -y. The
    // bottom face is never sampled; a range sensor cannot see it.
    [
        (Vector3::new(-h(sx), -h(sy), h(sz)), Vector3::new(sx, 0.0, 0.0), Vector3::new(0.0, sy, 0.0), sx * sy),
        (Vector3::new(h(sx), -h(sy), -h(sz)), Vector3::new(0.0, sy, 0.0), Vector3::new(0.0, 0.0, sz), sy * sz),
        (Vector3::new(-h(sx), -h(sy), -h(sz)), Vector3::new(0.0, sy, 0.0), Vector3::new(0.0, 0.0, sz), sy * sz),
        (Vector3::new(-h(sx), h(sy), -h(sz)), Vector3::new(sx, 0.0, 0.0), Vector3::new(0.0, 0.0, sz), sx * sz),
        (Vector3::new(-h(sx), -h(sy), -h(sz)), Vector3::new(sx, 0.0, 0.0), Vector3::new(0.0, 0.0, sz), sx * sz),
    ]
}

fn object_samples(spec: &SceneSpec, obj: &ObjectSpec) -> Vec<SurfaceSample> {
    let faces = cuboid_faces(obj.size);
    let mut samples = Vec::new();
    if let Some(spacing) = spec.sensor.grid_spacing {
        for (origin, eu, ev, _) in faces {
            let nu = (eu.norm() / spacing).floor() as usize + 1;
            let nv = (ev.norm() / spacing).floor() as usize + 1;
            let du = eu.normalize() * spacing;
            let dv = ev.normalize() * spacing;
            for iu in 0..nu {
                for iv in 0..nv {
                    let p = origin + du * iu as f64 + dv * iv as f64;
                    samples.push(SurfaceSample {
                        local: p.map(quantize),
                        rank: unit_hash(&[obj.id as u64, samples.len() as u64]),
                    });
                }
            }
        }
    } else {
        let mut rng = rng_for(spec.seed, Stream::Sampling, obj.id as u64);
        let total_area: f64 = faces.iter().map(|f| f.3).sum();
        let count = ((spec.sensor.object_density * total_area).round() as usize)
            .clamp(1, spec.sensor.max_points_per_object);
        use rand::Rng;
        for k in 0..count {
            // Pick a face proportionally to area, then a uniform point on it.
            let mut pick = rng.gen_range(0.0..total_area);
            let mut face = &faces[0];
            for f in &faces {
                if pick < f.3 {
                    face = f;
                    break;
                }
                pick -= f.3;
            }
            let (origin, eu, ev, _) = face;
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0);
            let p = origin + eu * a + ev * b;
            samples.push(SurfaceSample {
                local: p.map(quantize),
                rank: unit_hash(&[obj.id as u64, k as u64]),
            });
        }
    }
    samples
}

fn ground_samples(spec: &SceneSpec) -> Vec<(Vector3<f64>, f64)> {
    let bg = &spec.background;
    let area = (bg.x_range[1] - bg.x_range[0]).max(0.0) * (bg.y_range[1] - bg.y_range[0]).max(0.0);
    let count = (bg.density * area).round() as usize;
    let mut rng = rng_for(spec.seed, Stream::Sampling, u64::MAX);
    use rand::Rng;
    (0..count)
        .map(|k| {
            let x = quantize(rng.gen_range(bg.x_range[0]..bg.x_range[1]));
            let y = quantize(rng.gen_range(bg.y_range[0]..bg.y_range[1]));
            (Vector3::new(x, y, 0.0), unit_hash(&[u64::MAX, k as u64]))
        })
        .collect()
}

fn density_factor(ref_range: f64, range: f64) -> f64 {
    if range <= ref_range {
        1.0
    } else {
        (ref_range / range).powi(2)
    }
}

pub fn validate_spec(spec: &SceneSpec) -> Result<(), SimError> {
    let scene = spec.name.clone();
    if spec.frames == 0 {
        return Err(SimError::NoFrames { scene });
    }
    let mut seen = std::collections::BTreeSet::new();
    for obj in &spec.objects {
        if obj.id == 0 {
            return Err(SimError::ZeroObjectId { scene });
        }
        if !seen.insert(obj.id) {
            return Err(SimError::DuplicateObjectId { scene, id: obj.id });
        }
        if obj.size.iter().any(|&s| !(s > 0.0)) {
            return Err(SimError::BadSize { scene, id: obj.id });
        }
        if let Some(len) = obj.trajectory.len() {
            if len < spec.frames as usize {
                return Err(SimError::ShortTrajectory { scene, id: obj.id });
            }
        }
        let mut max_step = 0.0f64;
        for t in 0..spec.frames.saturating_sub(1) as u64 {
            let a = obj.trajectory.pose_at(t);
            let b = obj.trajectory.pose_at(t + 1);
            let step = (b.translation() - a.translation()).norm()
                + (b.rotation() - a.rotation()).norm();
            match obj.mobility {
                Mobility::Moving => max_step = max_step.max(step),
                Mobility::Static => {
                    if step > 0.0 {
                        return Err(SimError::StaticMoves { scene, id: obj.id, frame: t + 1 });
                    }
                }
            }
        }
        if obj.mobility == Mobility::Moving
            && spec.frames > 1
            && max_step < MIN_MOVER_DISPLACEMENT
        {
            return Err(SimError::MoverTooSlow { scene, id: obj.id, min: MIN_MOVER_DISPLACEMENT });
        }
    }
    // Overlap check over every frame.
    for t in 0..spec.frames as u64 {
        let boxes: Vec<(u32, BBox3D)> = spec
            .objects
            .iter()
            .map(|o| (o.id, object_bbox3d(o, t)))
            .collect();
        for i in 0..boxes.len() {
            for j in (i + 1)..boxes.len() {
                if bbox3d_iou(&boxes[i].1, &boxes[j].1) > 0.0 {
                    return Err(SimError::ObjectOverlap {
                        scene,
                        a: boxes[i].0,
                        b: boxes[j].0,
                        frame: t,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Global-frame axis-aligned bound of an object at frame `t`.
fn object_bbox3d(obj: &ObjectSpec, t: u64) -> BBox3D {
    let pose = obj.trajectory.pose_at(t);
    let corners = cuboid_corners(obj.size, &pose);
    crate::geom::bbox3d_from_points(corners.iter()).expect("cuboid corners are non-empty")
}

pub(crate) fn cuboid_corners(size: [f64; 3], pose: &RigidTransform) -> Vec<Point3<f64>> {
    let [sx, sy, sz] = size;
    let mut out = Vec::with_capacity(8);
    for dx in [-0.5, 0.5] {
        for dy in [-0.5, 0.5] {
            for dz in [-0.5, 0.5] {
                out.push(pose.apply(&Point3::new(dx * sx, dy * sy, dz * sz)));
            }
        }
    }
    out
}

pub fn default_calibration(camera: &CameraSpec) -> Calibration {
    // Ego x-forward/y-left/z-up to camera x-right/y-down/z-forward,
    // camera center `mount_height` above the ego origin.
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let c = Vector3::new(0.0, 0.0, camera.mount_height);
    let t = -(r * c);
    Calibration {
        intrinsics: CameraIntrinsics::new(
            camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height,
        )
        .expect("camera spec validated"),
        t_cl: RigidTransform::new(r, t).expect("permutation matrix is a rotation"),
    }
}

/// Generates the full scene dataset for `spec`.
pub fn generate(spec: &SceneSpec) -> Result<SceneDataset, SimError> {
    validate_spec(spec)?;
    let calib = default_calibration(&spec.camera);
    let per_object: Vec<Vec<SurfaceSample>> =
        spec.objects.iter().map(|o| object_samples(spec, o)).collect();
    let ground = ground_samples(spec);

    let mut frames = Vec::with_capacity(spec.frames as usize);
    for t in 0..spec.frames as u64 {
        frames.push(generate_frame(spec, &calib, &per_object, &ground, t)?);
    }
    Ok(SceneDataset { name: spec.name.clone(), calib, frames, spec: Some(spec.clone()) })
}

fn generate_frame(
    spec: &SceneSpec,
    calib: &Calibration,
    per_object: &[Vec<SurfaceSample>],
    ground: &[(Vector3<f64>, f64)],
    t: u64,
) -> Result<FrameRecord, SimError> {
    let ego = spec.ego.pose_at(t);
    let ego_inv = ego.inverse();
    let ego_pos = ego.translation();
    let last = spec.frames as u64 - 1;
    // Flow interval: forward difference, backward at the last frame.
    let (ta, tb) = if t < last { (t, t + 1) } else { (t.saturating_sub(1), t) };

    let mut noise = (spec.sensor.noise_sigma > 0.0).then(|| {
        (rng_for(spec.seed, Stream::SensorNoise, t), Normal::new(0.0, spec.sensor.noise_sigma).unwrap())
    });
    let draw_noise = |on: &mut Option<(rand_chacha::ChaCha8Rng, Normal<f64>)>| -> Vector3<f64> {
        match on {
            Some((rng, normal)) => Vector3::new(
                quantize(normal.sample(rng)),
                quantize(normal.sample(rng)),
                quantize(normal.sample(rng)),
            ),
            None => Vector3::zeros(),
        }
    };

    let mut points: Vec<Point3<f64>> = Vec::new();
    let mut instance_ids: Vec<u32> = Vec::new();
    let mut flow: Vec<Vector3<f64>> = Vec::new();

    for (obj, samples) in spec.objects.iter().zip(per_object) {
        let pose_t = obj.trajectory.pose_at(t);
        let pose_a = obj.trajectory.pose_at(ta);
        let pose_b = obj.trajectory.pose_at(tb);
        let center = pose_t.apply(&Point3::origin());
        let range = (center.coords - ego_pos).norm();
        let keep = density_factor(spec.sensor.ref_range, range);
        for (k, s) in samples.iter().enumerate() {
            // Noise draws must not depend on visibility, or dropping one
            // sample would shift every later sample's noise.
            let n = draw_noise(&mut noise);
            if s.rank > keep {
                continue;
            }
            if spec.sensor.dropout > 0.0
                && unit_hash(&[t, obj.id as u64, k as u64, 0xd204]) < spec.sensor.dropout
            {
                continue;
            }
            let global = pose_t.apply(&Point3::from(s.local));
            let ego_xyz = ego_inv.apply(&global) + n;
            points.push(Point3::from(ego_xyz.coords.map(to_f32_grid)));
            instance_ids.push(obj.id);
            flow.push(match obj.mobility {
                Mobility::Static => Vector3::zeros(),
                Mobility::Moving => {
                    // Clean quantized positions reconstructed the same way
                    // any consumer would: ego pose applied to the stored
                    // ego-frame value.
                    let ego_a = spec.ego.pose_at(ta);
                    let ego_b = spec.ego.pose_at(tb);
                    let pa = ego_a.apply(&Point3::from(
                        ego_a.inverse().apply(&pose_a.apply(&Point3::from(s.local))).coords.map(to_f32_grid),
                    ));
                    let pb = ego_b.apply(&Point3::from(
                        ego_b.inverse().apply(&pose_b.apply(&Point3::from(s.local))).coords.map(to_f32_grid),
                    ));
                    pb - pa
                }
            });
        }
    }

    for (g, rank) in ground {
        let n = draw_noise(&mut noise);
        let range = (g - ego_pos).norm();
        if *rank > density_factor(spec.sensor.ref_range, range) {
            continue;
        }
        if spec.sensor.dropout > 0.0
            && unit_hash(&[t, u64::MAX, (g.x * 1024.0) as u64, (g.y * 1024.0) as u64]) < spec.sensor.dropout
        {
            continue;
        }
        let ego_xyz = ego_inv.apply(&Point3::from(*g)) + n;
        points.push(Point3::from(ego_xyz.coords.map(to_f32_grid)));
        instance_ids.push(0);
        flow.push(Vector3::zeros());
    }

    let cloud = PointCloud::new(t, Frame::Ego, points)?;
    let image = render::render(spec, calib, t, &ego);
    let (boxes2d, boxes3d) = gt_boxes(spec, calib, t, &ego, &cloud, &instance_ids);
    let mobility = spec.objects.iter().map(|o| (o.id, o.mobility)).collect();

    Ok(FrameRecord {
        frame_id: t,
        cloud,
        image,
        ego_pose: ego,
        gt: FrameGt { instance_ids, flow, boxes2d, boxes3d, mobility },
    })
}

fn gt_boxes(
    spec: &SceneSpec,
    calib: &Calibration,
    t: u64,
    ego: &RigidTransform,
    cloud: &PointCloud,
    instance_ids: &[u32],
) -> (Vec<(u32, BBox2D)>, Vec<(u32, BBox3D)>) {
    let ego_inv = ego.inverse();
    let projections = project_to_image(cloud, &calib.intrinsics, &calib.t_cl);
    let mut boxes2d = Vec::new();
    let mut boxes3d = Vec::new();
    for obj in &spec.objects {
        let pose = obj.trajectory.pose_at(t);
        // 3D box in the ego frame (where clouds and segments live).
        let corners_ego: Vec<Point3<f64>> = cuboid_corners(obj.size, &pose)
            .iter()
            .map(|c| ego_inv.apply(c))
            .collect();
        if let Ok(b3) = crate::geom::bbox3d_from_points(corners_ego.iter()) {
            boxes3d.push((obj.id, b3));
        }
        // 2D box: silhouette bound of the cuboid corners, kept only when
        // the object is in front of the camera and has sensor evidence.
        let cam_corners: Vec<Point3<f64>> =
            corners_ego.iter().map(|c| calib.t_cl.apply(c)).collect();
        if cam_corners.iter().any(|c| c.z <= 0.1) {
            continue;
        }
        let visible_points = instance_ids
            .iter()
            .zip(&projections)
            .filter(|(&id, pr)| id == obj.id && pr.visible)
            .count();
        if visible_points == 0 {
            continue;
        }
        let (mut u0, mut v0, mut u1, mut v1) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in &cam_corners {
            let u = calib.intrinsics.fx * c.x / c.z + calib.intrinsics.cx;
            let v = calib.intrinsics.fy * c.y / c.z + calib.intrinsics.cy;
            u0 = u0.min(u);
            v0 = v0.min(v);
            u1 = u1.max(u);
            v1 = v1.max(v);
        }
        if let Ok(b) = BBox2D::new(u0, v0, u1, v1, 1.0) {
            if let Some(clipped) = b.clipped(calib.intrinsics.width, calib.intrinsics.height) {
                boxes2d.push((obj.id, clipped));
            }
        }
    }
    (boxes2d, boxes3d)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn tiny_spec() -> SceneSpec {
        SceneSpec {
            name: "tiny".into(),
            frames: 4,
            seed: 11,
            ego: Trajectory::Linear { start: [0.0, 0.0, 0.0], velocity: [0.25, 0.0, 0.0] },
            objects: vec![
                ObjectSpec {
                    id: 1,
                    size: [2.0, 1.5, 1.5],
                    mobility: Mobility::Moving,
                    trajectory: Trajectory::Linear {
                        start: [10.0, 2.0, 0.75],
                        velocity: [0.25, 0.0, 0.0],
                    },
                    appearance: Appearance { base_color: [0.8, 0.2, 0.2], texture_noise: 0.02 },
                },
                ObjectSpec {
                    id: 2,
                    size: [2.0, 1.5, 1.5],
                    mobility: Mobility::Static,
                    trajectory: Trajectory::Fixed { position: [14.0, -3.0, 0.75] },
                    appearance: Appearance { base_color: [0.2, 0.3, 0.8], texture_noise: 0.02 },
                },
            ],
            background: BackgroundSpec {
                x_range: [2.0, 30.0],
                y_range: [-10.0, 10.0],
                density: 0.8,
                base_color: [0.45, 0.45, 0.42],
                image_noise: 0.015,
            },
            sensor: SensorSpec::default(),
            camera: CameraSpec::default(),
        }
    }

    pub(crate) fn tiny_scene() -> SceneDataset {
        generate(&tiny_spec()).expect("tiny spec is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::tiny_spec;
    use super::*;

    #[test]
    fn generates_deterministically() {
        let spec = tiny_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cloud_coordinates_are_f32_exact() {
        let data = generate(&tiny_spec()).unwrap();
        for f in &data.frames {
            for p in f.cloud.points() {
                for c in [p.x, p.y, p.z] {
                    assert_eq!(c, c as f32 as f64);
                }
            }
        }
    }

    #[test]
    fn static_flow_is_exactly_zero() {
        let data = generate(&tiny_spec()).unwrap();
        for f in &data.frames {
            for (i, &id) in f.gt.instance_ids.iter().enumerate() {
                if id == 2 || id == 0 {
                    assert_eq!(f.gt.flow[i], Vector3::zeros());
                }
            }
        }
    }

    #[test]
    fn mover_flow_matches_velocity() {
        let data = generate(&tiny_spec()).unwrap();
        for f in &data.frames {
            for (i, &id) in f.gt.instance_ids.iter().enumerate() {
                if id == 1 {
                    let err = (f.gt.flow[i] - Vector3::new(0.25, 0.0, 0.0)).norm();
                    assert!(err < 1e-9, "flow {:?}", f.gt.flow[i]);
                }
            }
        }
    }

    #[test]
    fn flow_equals_reconstructed_displacement_exactly() {
        // The same-arithmetic reconstruction the generator promises: take
        // the stored point, lift to global with the ego pose, step the
        // object pose, and compare.
        let spec = tiny_spec();
        let data = generate(&spec).unwrap();
        for t in 0..3usize {
            let f = &data.frames[t];
            let ego_a = spec.ego.pose_at(t as u64);
            let ego_b = spec.ego.pose_at(t as u64 + 1);
            let next = &data.frames[t + 1];
            // Index the mover's points by exact local identity: the same
            // canonical samples appear in the same order in both frames.
            let cur: Vec<usize> =
                (0..f.cloud.len()).filter(|&i| f.gt.instance_ids[i] == 1).collect();
            let nxt: Vec<usize> =
                (0..next.cloud.len()).filter(|&i| next.gt.instance_ids[i] == 1).collect();
            assert_eq!(cur.len(), nxt.len());
            for (&i, &j) in cur.iter().zip(&nxt) {
                let pa = ego_a.apply(&f.cloud.points()[i]);
                let pb = ego_b.apply(&next.cloud.points()[j]);
                let d = (pb - pa) - f.gt.flow[i];
                assert!(d.norm() <= 1e-12, "residual {}", d.norm());
            }
        }
    }

    #[test]
    fn gt_points_project_inside_gt_boxes() {
        let data = generate(&tiny_spec()).unwrap();
        for f in &data.frames {
            let prs = project_to_image(&f.cloud, &data.calib.intrinsics, &data.calib.t_cl);
            for (id, b) in &f.gt.boxes2d {
                for (i, pr) in prs.iter().enumerate() {
                    if f.gt.instance_ids[i] == *id && pr.visible {
                        assert!(
                            pr.u >= b.x1 - 1e-9 && pr.u <= b.x2 + 1e-9
                                && pr.v >= b.y1 - 1e-9 && pr.v <= b.y2 + 1e-9,
                            "point ({}, {}) outside box {:?}",
                            pr.u, pr.v, b
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gt_3d_boxes_contain_their_points() {
        let data = generate(&tiny_spec()).unwrap();
        for f in &data.frames {
            for (id, b) in &f.gt.boxes3d {
                for i in 0..f.cloud.len() {
                    let inside = b.contains(&f.cloud.points()[i]);
                    if f.gt.instance_ids[i] == *id {
                        assert!(inside, "instance point escapes its box");
                    } else if inside {
                        // Boxes rest on the ground plane, so ground points
                        // under the footprint are inside; other objects
                        // never are.
                        assert_eq!(f.gt.instance_ids[i], 0);
                    }
                }
            }
        }
    }

    #[test]
    fn overlapping_objects_are_rejected() {
        let mut spec = tiny_spec();
        spec.objects[1].trajectory = Trajectory::Fixed { position: [10.5, 2.0, 0.75] };
        let err = generate(&spec).unwrap_err();
        assert!(matches!(err, SimError::ObjectOverlap { a: 1, b: 2, .. }));
    }

    #[test]
    fn slow_mover_is_rejected() {
        let mut spec = tiny_spec();
        spec.objects[0].trajectory =
            Trajectory::Linear { start: [10.0, 2.0, 0.75], velocity: [0.01, 0.0, 0.0] };
        assert!(matches!(generate(&spec), Err(SimError::MoverTooSlow { id: 1, .. })));
    }

    #[test]
    fn moving_static_object_is_rejected() {
        let mut spec = tiny_spec();
        spec.objects[1].trajectory =
            Trajectory::Linear { start: [14.0, -3.0, 0.75], velocity: [0.25, 0.0, 0.0] };
        assert!(matches!(generate(&spec), Err(SimError::StaticMoves { id: 2, .. })));
    }

    #[test]
    fn ego_compensation_cancels_for_static_cube() {
        // Ego advances 1 m per frame past a static object; in the ego
        // frame the object recedes, in the global frame it stands still.
        let mut spec = tiny_spec();
        spec.ego = Trajectory::Linear { start: [0.0, 0.0, 0.0], velocity: [1.0, 0.0, 0.0] };
        let data = generate(&spec).unwrap();
        for t in 0..3usize {
            let (a, b) = (&data.frames[t], &data.frames[t + 1]);
            let ego_a = spec.ego.pose_at(t as u64);
            let ego_b = spec.ego.pose_at(t as u64 + 1);
            let cur: Vec<usize> =
                (0..a.cloud.len()).filter(|&i| a.gt.instance_ids[i] == 2).collect();
            let nxt: Vec<usize> =
                (0..b.cloud.len()).filter(|&i| b.gt.instance_ids[i] == 2).collect();
            assert_eq!(cur.len(), nxt.len());
            for (&i, &j) in cur.iter().zip(&nxt) {
                // Ego-frame positions differ...
                let d_ego = (b.cloud.points()[j] - a.cloud.points()[i]).norm();
                assert!(d_ego > 0.9);
                // ...global reconstructions cancel exactly on the dyadic grid.
                let g_a = ego_a.apply(&a.cloud.points()[i]);
                let g_b = ego_b.apply(&b.cloud.points()[j]);
                assert_eq!(g_a, g_b);
            }
        }
    }

    #[test]
    fn sensor_view_hides_oracle_fields() {
        let data = generate(&tiny_spec()).unwrap();
        let sensor = data.sensor_view();
        assert_eq!(sensor.frames.len(), data.frames.len());
        assert_eq!(sensor.frames[0].cloud, data.frames[0].cloud);
        // Nothing more to assert: the type itself has no gt fields.
    }
}
