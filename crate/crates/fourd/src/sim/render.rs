//! Painter's-order rasterizer for cuboid scenes.
//!
//! Each object is drawn as the filled convex hull of its eight projected
//! corners, far objects first, over a noisy ground color. Noise is a pure
//! hash of (seed, frame, pixel, channel), so rendering order cannot
//! perturb it.

use super::{cuboid_corners, unit_hash, Calibration, SceneSpec};
use crate::geom::RigidTransform;
use serde::{Deserialize, Serialize};

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height * 3) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> u8 {
        self.data[(y * self.width + x) as usize * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: usize, v: u8) {
        self.data[(y * self.width + x) as usize * 3 + c] = v;
    }

    /// Channel intensity in [0, 1].
    #[inline]
    pub fn value(&self, x: u32, y: u32, c: usize) -> f64 {
        self.get(x, y, c) as f64 / 255.0
    }
}

fn shade(base: f64, amplitude: f64, noise: f64) -> u8 {
    let v = (base + amplitude * (2.0 * noise - 1.0)).clamp(0.0, 1.0);
    (v * 255.0).round() as u8
}

/// Convex hull via monotone chain; strictly convex output.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite projections"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Horizontal pixel span of a convex polygon at scanline center `y`.
fn scan_span(hull: &[(f64, f64)], y: f64) -> Option<(f64, f64)> {
    let mut xs: Vec<f64> = Vec::new();
    let n = hull.len();
    for i in 0..n {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % n];
        if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
            xs.push(x0 + (y - y0) / (y1 - y0) * (x1 - x0));
        }
    }
    if xs.len() < 2 {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite span"));
    Some((xs[0], xs[xs.len() - 1]))
}

pub(crate) fn render(
    spec: &SceneSpec,
    calib: &Calibration,
    t: u64,
    ego: &RigidTransform,
) -> Image {
    let (w, h) = (calib.intrinsics.width, calib.intrinsics.height);
    let mut img = Image::new(w, h);
    let bg = &spec.background;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let n = unit_hash(&[spec.seed, t, x as u64, y as u64, c as u64]);
                img.set(x, y, c, shade(bg.base_color[c], bg.image_noise, n));
            }
        }
    }

    let ego_inv = ego.inverse();
    // Far to near by camera depth of the center; ties broken by id.
    let mut order: Vec<(f64, u32, usize)> = Vec::new();
    for (idx, obj) in spec.objects.iter().enumerate() {
        let center = obj.trajectory.pose_at(t).apply(&nalgebra::Point3::origin());
        let cam = calib.t_cl.apply(&ego_inv.apply(&center));
        if cam.z > 0.1 {
            order.push((cam.z, obj.id, idx));
        }
    }
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite depth").then(a.1.cmp(&b.1)));

    for (_, _, idx) in order {
        let obj = &spec.objects[idx];
        let pose = obj.trajectory.pose_at(t);
        let mut proj: Vec<(f64, f64)> = Vec::new();
        let mut behind = false;
        for corner in cuboid_corners(obj.size, &pose) {
            let cam = calib.t_cl.apply(&ego_inv.apply(&corner));
            if cam.z <= 0.1 {
                behind = true;
                break;
            }
            proj.push((
                calib.intrinsics.fx * cam.x / cam.z + calib.intrinsics.cx,
                calib.intrinsics.fy * cam.y / cam.z + calib.intrinsics.cy,
            ));
        }
        if behind {
            continue;
        }
        let hull = convex_hull(proj);
        if hull.len() < 3 {
            continue;
        }
        let v_lo = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let v_hi = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64 - 1.0) as u32;
        for y in v_lo..=v_hi {
            let Some((x0, x1)) = scan_span(&hull, y as f64 + 0.5) else { continue };
            let px0 = x0.ceil().max(0.0) as u32;
            let px1 = x1.floor().min(w as f64 - 1.0) as i64;
            if px1 < px0 as i64 {
                continue;
            }
            for x in px0..=px1 as u32 {
                for c in 0..3 {
                    let n = unit_hash(&[spec.seed, t, x as u64, y as u64, c as u64, obj.id as u64]);
                    img.set(x, y, c, shade(obj.appearance.base_color[c], obj.appearance.texture_noise, n));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_is_square() {
        let hull = convex_hull(vec![
            (0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0), (0.5, 1.5),
        ]);
        assert_eq!(hull.len(), 4);
        for corner in [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)] {
            assert!(hull.contains(&corner));
        }
    }

    #[test]
    fn span_of_square_scanline() {
        let hull = convex_hull(vec![(1.0, 1.0), (5.0, 1.0), (5.0, 4.0), (1.0, 4.0)]);
        let (x0, x1) = scan_span(&hull, 2.5).unwrap();
        assert!((x0 - 1.0).abs() < 1e-12 && (x1 - 5.0).abs() < 1e-12);
        assert!(scan_span(&hull, 5.0).is_none());
    }

    #[test]
    fn hull_handles_collinear_points() {
        let hull = convex_hull(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)]);
        assert!(hull.len() >= 4);
    }
}
