//! Geometric vocabulary shared by every stage: rigid transforms, point
//! clouds, pinhole projection, axis-aligned boxes and IoU kernels.
//!
//! Conventions, fixed once for the whole crate:
//!
//! - The ego frame is x-forward, y-left, z-up, origin on the ground plane.
//! - The camera frame is x-right, y-down, z-forward.
//! - Pixel coordinates are continuous; `(u, v)` is visible when the camera
//!   depth is strictly positive and `0 <= u < width`, `0 <= v < height`.
//! - Projection never drops points: every input point gets an output entry
//!   with a visibility flag, so point indices survive the round trip.

mod calib;
mod grid;
mod ground;

pub use calib::{read_calibration, write_calibration, Calibration};
pub use grid::GridIndex;
pub use ground::{remove_ground, GroundRansacConfig};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("rotation is not orthonormal with determinant +1 (residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("2D box has empty extent: x {x1}..{x2}, y {y1}..{y2}")]
    EmptyBox2D { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box score {score} outside [0, 1]")]
    BadScore { score: f64 },
    #[error("3D box has empty extent on axis {axis}")]
    EmptyBox3D { axis: usize },
    #[error("cannot build a box from an empty point set")]
    EmptyPointSet,
    #[error("camera intrinsics must be positive and finite")]
    BadIntrinsics,
    #[error("calibration file: {0}")]
    Calibration(String),
}

/// Rotation plus translation, always a proper rigid motion.
///
/// The rotation is validated at every construction site, so downstream code
/// can compose and invert without re-checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Validates that `rotation` is orthonormal with determinant +1
    /// (residual below 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let gram = rotation.transpose() * rotation;
        let residual = (gram - Matrix3::identity()).norm() + (rotation.determinant() - 1.0).abs();
        if !residual.is_finite() || residual > 1e-9 {
            return Err(GeomError::NotARotation { residual });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::NonFinite { context: "translation" });
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation about +z (yaw), angle in radians.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self` after `rhs`: `(self * rhs)(p) = self(rhs(p))`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Row-major rotation followed by translation, the order used in the
    /// plain-text pose and calibration files.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self, GeomError> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
        Self::new(rotation, Vector3::new(m[9], m[10], m[11]))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RigidTransformRepr { r: self.to_row_major()[..9].try_into().unwrap(), t: [
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ] }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RigidTransformRepr::deserialize(deserializer)?;
        let mut m = [0.0; 12];
        m[..9].copy_from_slice(&repr.r);
        m[9..].copy_from_slice(&repr.t);
        RigidTransform::from_row_major(&m).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    r: [f64; 9],
    t: [f64; 3],
}

/// Coordinate frame a cloud's points are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Ego,
    Global,
}

/// A point cloud with its frame tag. Coordinates are validated finite at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub frame_id: u64,
    pub frame: Frame,
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(frame_id: u64, frame: Frame, points: Vec<Point3<f64>>) -> Result<Self, GeomError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeomError::NonFinitePoint { index });
            }
        }
        Ok(Self { frame_id, frame, points })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `t` to every point and retags the cloud.
    pub fn transformed(&self, t: &RigidTransform, new_frame: Frame) -> Self {
        Self {
            frame_id: self.frame_id,
            frame: new_frame,
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

/// Pinhole camera intrinsics plus the image size they are valid for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let finite = fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite();
        if !finite || fx <= 0.0 || fy <= 0.0 || width == 0 || height == 0 {
            return Err(GeomError::BadIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }
}

/// Result of projecting one point. `u`, `v` are always finite; for points
/// at or behind the camera plane the depth is clamped to a tiny positive
/// value first, and `visible` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

/// Projects every point of `cloud` (sensor frame) through `t_cl` into the
/// image plane. Output order matches input order; nothing is dropped.
pub fn project_to_image(
    cloud: &PointCloud,
    intrinsics: &CameraIntrinsics,
    t_cl: &RigidTransform,
) -> Vec<Projection> {
    cloud
        .points()
        .iter()
        .map(|p| {
            let c = t_cl.apply(p);
            let z = c.z.max(1e-9);
            let u = intrinsics.fx * c.x / z + intrinsics.cx;
            let v = intrinsics.fy * c.y / z + intrinsics.cy;
            let visible = c.z > 0.0
                && u >= 0.0
                && u < intrinsics.width as f64
                && v >= 0.0
                && v < intrinsics.height as f64;
            Projection { u, v, depth: c.z, visible }
        })
        .collect()
}

/// Axis-aligned crop volume. Bounds are exclusive on both sides: a point
/// survives only strictly inside the volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl CropRange {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x > self.x[0] && p.x < self.x[1]
            && p.y > self.y[0] && p.y < self.y[1]
            && p.z > self.z[0] && p.z < self.z[1]
    }
}

impl Default for CropRange {
    fn default() -> Self {
        Self { x: [0.0, 74.88], y: [-37.44, 37.44], z: [-2.0, 4.0] }
    }
}

/// Keeps the points strictly inside `range`. Returns the cropped cloud and
/// the indices of the surviving points in the input cloud.
pub fn crop_to_range(cloud: &PointCloud, range: &CropRange) -> (PointCloud, Vec<usize>) {
    let mut points = Vec::new();
    let mut kept = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        if range.contains(p) {
            points.push(*p);
            kept.push(i);
        }
    }
    (
        PointCloud { frame_id: cloud.frame_id, frame: cloud.frame, points },
        kept,
    )
}

/// 2D box in pixel coordinates with a confidence score.
/// `x1 < x2` and `y1 < y2` always hold; degenerate extents are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl BBox2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Result<Self, GeomError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) || x2 <= x1 || y2 <= y1 {
            return Err(GeomError::EmptyBox2D { x1, y1, x2, y2 });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeomError::BadScore { score });
        }
        Ok(Self { x1, y1, x2, y2, score })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersects the box with the image rectangle. `None` when nothing
    /// with positive area remains.
    pub fn clipped(&self, width: u32, height: u32) -> Option<Self> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width as f64);
        let y2 = self.y2.min(height as f64);
        (x2 > x1 && y2 > y1).then_some(Self { x1, y1, x2, y2, score: self.score })
    }

    pub fn with_score(&self, score: f64) -> Result<Self, GeomError> {
        Self::new(self.x1, self.y1, self.x2, self.y2, score)
    }
}

/// Intersection over union of two 2D boxes. Valid boxes always give a
/// value in [0, 1].
pub fn bbox2d_iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of two point-index sets. Inputs must be strictly sorted ascending.
/// Two empty sets have IoU 0 by definition.
pub fn point_set_iou(a: &[usize], b: &[usize]) -> f64 {
    debug_assert!(a.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(b.windows(2).all(|w| w[0] < w[1]));
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Axis-aligned 3D box; every axis has strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox3D {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BBox3D {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, GeomError> {
        for axis in 0..3 {
            if !(min[axis].is_finite() && max[axis].is_finite()) || max[axis] <= min[axis] {
                return Err(GeomError::EmptyBox3D { axis });
            }
        }
        Ok(Self { min, max })
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::new(
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        )
    }

    /// Closed containment: points on a face count as inside.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| {
            let c = [p.x, p.y, p.z][a];
            c >= self.min[a] && c <= self.max[a]
        })
    }
}

/// Tight axis-aligned bound of a non-empty point set.
pub fn bbox3d_from_points<'a, I>(points: I) -> Result<BBox3D, GeomError>
where
    I: IntoIterator<Item = &'a Point3<f64>>,
{
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in points {
        any = true;
        for (a, c) in [p.x, p.y, p.z].into_iter().enumerate() {
            min[a] = min[a].min(c);
            max[a] = max[a].max(c);
        }
    }
    if !any {
        return Err(GeomError::EmptyPointSet);
    }
    // A degenerate flat extent still deserves a usable box: pad by a hair
    // so single points and axis-aligned planes remain representable.
    for a in 0..3 {
        if max[a] - min[a] < 1e-9 {
            min[a] -= 5e-10;
            max[a] += 5e-10;
        }
    }
    BBox3D::new(min, max)
}

/// Volume IoU of two axis-aligned 3D boxes.
pub fn bbox3d_iou(a: &BBox3D, b: &BBox3D) -> f64 {
    let mut inter = 1.0;
    for axis in 0..3 {
        let lo = a.min[axis].max(b.min[axis]);
        let hi = a.max[axis].min(b.max[axis]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    inter / union
}
