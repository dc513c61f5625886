//! Seeded RANSAC ground-plane removal.
//!
//! The plane is fit to three sampled points per iteration; a candidate is
//! accepted only when its normal tilts no more than `max_tilt_deg` from
//! vertical, and the winning plane must explain at least `min_inlier_frac`
//! of the cloud. When no such plane exists the cloud passes through
//! unchanged, so downstream stages never see a spurious cut.

use super::PointCloud;
use crate::rng::{rng_for, Stream};
use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundRansacConfig {
    pub iterations: u32,
    /// Point-to-plane distance below which a point counts as ground.
    pub inlier_distance: f64,
    /// Maximum angle between the plane normal and +z, degrees.
    pub max_tilt_deg: f64,
    /// Minimum fraction of the cloud the plane must explain.
    pub min_inlier_frac: f64,
    pub seed: u64,
}

impl Default for GroundRansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_distance: 0.15,
            max_tilt_deg: 10.0,
            min_inlier_frac: 0.2,
            seed: 0,
        }
    }
}

/// Plane as unit normal (oriented +z) and offset: `n . p + d = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub d: f64,
}

/// Removes the dominant near-horizontal plane from `cloud`.
///
/// Returns the cloud without ground points, a per-input-point ground mask,
/// and the accepted plane (`None` when the cloud passed through unchanged).
pub fn remove_ground(
    cloud: &PointCloud,
    cfg: &GroundRansacConfig,
) -> (PointCloud, Vec<bool>, Option<GroundPlane>) {
    let pts = cloud.points();
    let n = pts.len();
    let unchanged = |cloud: &PointCloud| (cloud.clone(), vec![false; n], None);
    if n < 3 {
        return unchanged(cloud);
    }

    let mut rng = rng_for(cfg.seed, Stream::GroundRansac, cloud.frame_id);
    let cos_max_tilt = cfg.max_tilt_deg.to_radians().cos();
    let mut best: Option<(usize, GroundPlane)> = None;

    for _ in 0..cfg.iterations {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = plane_through(&pts[i], &pts[j], &pts[k]) else {
            continue;
        };
        if plane.normal.z < cos_max_tilt {
            continue;
        }
        let inliers = pts
            .iter()
            .filter(|p| (plane.normal.dot(&p.coords) + plane.d).abs() <= cfg.inlier_distance)
            .count();
        if best.map_or(true, |(bc, _)| inliers > bc) {
            best = Some((inliers, plane));
        }
    }

    let Some((count, plane)) = best else {
        return unchanged(cloud);
    };
    if (count as f64) < cfg.min_inlier_frac * n as f64 {
        return unchanged(cloud);
    }

    let mask: Vec<bool> = pts
        .iter()
        .map(|p| (plane.normal.dot(&p.coords) + plane.d).abs() <= cfg.inlier_distance)
        .collect();
    let kept: Vec<Point3<f64>> = pts
        .iter()
        .zip(&mask)
        .filter(|(_, &ground)| !ground)
        .map(|(p, _)| *p)
        .collect();
    let out = PointCloud::new(cloud.frame_id, cloud.frame, kept)
        .expect("filtering preserves finiteness");
    (out, mask, Some(plane))
}

fn plane_through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<GroundPlane> {
    let normal = (b - a).cross(&(c - a));
    let norm = normal.norm();
    if norm < 1e-12 {
        return None;
    }
    let mut normal = normal / norm;
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some(GroundPlane { normal, d: -normal.dot(&a.coords) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;
    use rand::Rng;

    fn cloud_with_ground(tilt: f64) -> (PointCloud, usize) {
        let mut rng = rng_for(42, Stream::Sampling, 0);
        let mut points = Vec::new();
        // Ground: plane z = tilt * x.
        for _ in 0..300 {
            let x: f64 = rng.gen_range(0.0..40.0);
            let y: f64 = rng.gen_range(-15.0..15.0);
            points.push(Point3::new(x, y, tilt * x));
        }
        let ground_count = points.len();
        // A compact object well above the plane.
        for _ in 0..60 {
            let x: f64 = rng.gen_range(10.0..12.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let z: f64 = rng.gen_range(0.5..2.0);
            points.push(Point3::new(x, y, z));
        }
        (PointCloud::new(0, Frame::Ego, points).unwrap(), ground_count)
    }

    #[test]
    fn removes_flat_ground_keeps_object() {
        let (cloud, ground_count) = cloud_with_ground(0.0);
        let (kept, mask, plane) = remove_ground(&cloud, &GroundRansacConfig::default());
        let plane = plane.expect("plane found");
        assert!(plane.normal.z > 0.99);
        assert_eq!(mask.iter().filter(|&&g| g).count(), ground_count);
        assert_eq!(kept.len(), cloud.len() - ground_count);
        // Object points all survive.
        assert!(mask[ground_count..].iter().all(|&g| !g));
    }

    #[test]
    fn steep_plane_passes_through_unchanged() {
        // tan(25 deg) ~ 0.47 tilt, far beyond the 10 degree gate.
        let (cloud, _) = cloud_with_ground(0.47);
        let (kept, mask, plane) = remove_ground(&cloud, &GroundRansacConfig::default());
        assert!(plane.is_none());
        assert_eq!(kept.len(), cloud.len());
        assert!(mask.iter().all(|&g| !g));
    }

    #[test]
    fn sparse_plane_below_fraction_passes_through() {
        let mut rng = rng_for(7, Stream::Sampling, 1);
        let mut points = Vec::new();
        // 10% on the ground, the rest diffuse in a volume.
        for i in 0..200 {
            if i < 20 {
                points.push(Point3::new(rng.gen_range(0.0..40.0), rng.gen_range(-10.0..10.0), 0.0));
            } else {
                points.push(Point3::new(
                    rng.gen_range(0.0..40.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(1.0..30.0),
                ));
            }
        }
        let cloud = PointCloud::new(0, Frame::Ego, points).unwrap();
        let (kept, _, plane) = remove_ground(&cloud, &GroundRansacConfig::default());
        assert!(plane.is_none());
        assert_eq!(kept.len(), cloud.len());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (cloud, _) = cloud_with_ground(0.0);
        let cfg = GroundRansacConfig::default();
        let (a, mask_a, _) = remove_ground(&cloud, &cfg);
        let (b, mask_b, _) = remove_ground(&cloud, &cfg);
        assert_eq!(a.points(), b.points());
        assert_eq!(mask_a, mask_b);
    }

    #[test]
    fn tiny_cloud_passes_through() {
        let cloud = PointCloud::new(0, Frame::Ego, vec![Point3::new(0.0, 0.0, 0.0)]).unwrap();
        let (kept, mask, plane) = remove_ground(&cloud, &GroundRansacConfig::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(mask, vec![false]);
        assert!(plane.is_none());
    }
}
