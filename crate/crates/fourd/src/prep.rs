//! Point-cloud preprocessing shared by every pipeline stage: ground
//! removal followed by a range crop, with an index map back to the raw
//! cloud so per-point annotations can be gathered onto the kept subset.

use crate::geom::{
    crop_to_range, remove_ground, CropRange, GroundRansacConfig, PointCloud, RigidTransform,
};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub ground: GroundRansacConfig,
    pub crop: CropRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    /// Ego-frame cloud after ground removal and cropping.
    pub cloud: PointCloud,
    /// For each kept point, its index in the raw cloud.
    pub kept: Vec<usize>,
    /// Kept points lifted to the global frame with the ego pose.
    pub global: Vec<Point3<f64>>,
}

pub fn prepare_frame(
    raw: &PointCloud,
    ego_pose: &RigidTransform,
    cfg: &PrepConfig,
) -> PreparedFrame {
    let (no_ground, ground_mask, _) = remove_ground(raw, &cfg.ground);
    let survivors: Vec<usize> =
        (0..raw.len()).filter(|&i| !ground_mask[i]).collect();
    let (cloud, kept_local) = crop_to_range(&no_ground, &cfg.crop);
    let kept: Vec<usize> = kept_local.iter().map(|&i| survivors[i]).collect();
    let global = cloud.points().iter().map(|p| ego_pose.apply(p)).collect();
    PreparedFrame { cloud, kept, global }
}

/// Gathers a raw-indexed per-point attribute onto the kept subset.
pub fn gather<T: Copy>(values: &[T], kept: &[usize]) -> Vec<T> {
    kept.iter().map(|&i| values[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;
    use nalgebra::Vector3;

    #[test]
    fn ground_goes_away_and_indices_map_back() {
        let mut pts = Vec::new();
        // Dense ground sheet plus a box-like cluster above it.
        for i in 0..400 {
            let f = i as f64;
            pts.push(Point3::new(2.0 + (f % 20.0), -9.5 + (f / 20.0), 0.0));
        }
        let first_object = pts.len();
        for i in 0..60 {
            let f = i as f64;
            pts.push(Point3::new(10.0 + (f % 5.0) * 0.2, 1.0 + (f / 25.0) * 0.3, 1.0));
        }
        let raw = PointCloud::new(0, Frame::Ego, pts).unwrap();
        let pose = RigidTransform::from_translation(Vector3::new(100.0, 0.0, 0.0));
        let prep = prepare_frame(&raw, &pose, &PrepConfig::default());
        assert_eq!(prep.cloud.len(), 60);
        assert!(prep.kept.iter().all(|&i| i >= first_object));
        assert_eq!(prep.global[0].x, raw.points()[prep.kept[0]].x + 100.0);
    }

    #[test]
    fn crop_excludes_out_of_range_points() {
        let pts = vec![
            Point3::new(10.0, 0.0, 1.0),
            Point3::new(100.0, 0.0, 1.0),
            Point3::new(10.0, 0.0, 3.9),
        ];
        let raw = PointCloud::new(0, Frame::Ego, pts).unwrap();
        let prep = prepare_frame(&raw, &RigidTransform::identity(), &PrepConfig::default());
        // Too few points for a plane fit, so only the crop applies.
        assert_eq!(prep.kept, vec![0, 2]);
    }

    #[test]
    fn gather_follows_kept_indices() {
        assert_eq!(gather(&[10, 20, 30, 40], &[0, 3]), vec![10, 40]);
    }
}
