//! Scene flow between consecutive point clouds.
//!
//! The estimator works on ego-compensated (global-frame) clouds: each
//! point's flow is the displacement to its nearest neighbor in the next
//! frame, zero when nothing lies within the match radius. Equal distances
//! break toward the lower point index. The last frame of a sequence has
//! no successor, so its flow is the negated displacement to the previous
//! frame.
//!
//! On noiseless scenes generated by this crate the arithmetic is exact:
//! static geometry matches itself bit for bit, so its estimated flow is
//! exactly zero even under ego motion.

use crate::geom::GridIndex;
use nalgebra::{Point3, Vector3};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow io {path}: {message}")]
    Io { path: String, message: String },
    #[error("flow file {path}: byte length {len} is not a multiple of 12")]
    BadLength { path: String, len: usize },
    #[error("match radius must be positive and finite, got {0}")]
    BadRadius(f64),
}

/// Per-point displacement from `cur` to the nearest neighbor in `next`,
/// zero where no neighbor lies within `max_distance`.
pub fn nn_flow_between(
    cur: &[Point3<f64>],
    next: &[Point3<f64>],
    max_distance: f64,
) -> Result<Vec<Vector3<f64>>, FlowError> {
    if !(max_distance.is_finite() && max_distance > 0.0) {
        return Err(FlowError::BadRadius(max_distance));
    }
    if next.is_empty() {
        return Ok(vec![Vector3::zeros(); cur.len()]);
    }
    let grid = GridIndex::build(next, max_distance);
    let r2 = max_distance * max_distance;
    let mut out = Vec::with_capacity(cur.len());
    for p in cur {
        let mut best: Option<(f64, usize)> = None;
        for j in grid.candidates_near(p) {
            let d2 = (next[j] - p).norm_squared();
            if d2 <= r2 && best.map_or(true, |(bd, _)| d2 < bd) {
                best = Some((d2, j));
            }
        }
        out.push(match best {
            Some((_, j)) => next[j] - p,
            None => Vector3::zeros(),
        });
    }
    Ok(out)
}

/// Flow for every frame of a sequence of global-frame clouds: forward
/// differences, with the last frame negating its backward match. A single
/// frame gets all-zero flow.
pub fn sequence_nn_flow(
    clouds: &[Vec<Point3<f64>>],
    max_distance: f64,
) -> Result<Vec<Vec<Vector3<f64>>>, FlowError> {
    let t_count = clouds.len();
    let mut out = Vec::with_capacity(t_count);
    for t in 0..t_count {
        if t_count == 1 {
            out.push(vec![Vector3::zeros(); clouds[t].len()]);
        } else if t + 1 < t_count {
            out.push(nn_flow_between(&clouds[t], &clouds[t + 1], max_distance)?);
        } else {
            let mut back = nn_flow_between(&clouds[t], &clouds[t - 1], max_distance)?;
            for v in &mut back {
                *v = -*v;
            }
            out.push(back);
        }
    }
    Ok(out)
}

/// Little-endian f32 triples, one per point.
pub fn write_flow(path: &Path, flow: &[Vector3<f64>]) -> Result<(), FlowError> {
    let mut buf = Vec::with_capacity(flow.len() * 12);
    for v in flow {
        for c in [v.x, v.y, v.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)
        .map_err(|e| FlowError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_flow(path: &Path) -> Result<Vec<Vector3<f64>>, FlowError> {
    let buf = std::fs::read(path)
        .map_err(|e| FlowError::Io { path: path.display().to_string(), message: e.to_string() })?;
    if buf.len() % 12 != 0 {
        return Err(FlowError::BadLength { path: path.display().to_string(), len: buf.len() });
    }
    Ok(buf
        .chunks_exact(12)
        .map(|c| {
            Vector3::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[8..12].try_into().unwrap()) as f64,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force_flow(
        cur: &[Point3<f64>],
        next: &[Point3<f64>],
        max_distance: f64,
    ) -> Vec<Vector3<f64>> {
        cur.iter()
            .map(|p| {
                let mut best: Option<(f64, usize)> = None;
                for (j, q) in next.iter().enumerate() {
                    let d2 = (q - p).norm_squared();
                    if d2 <= max_distance * max_distance
                        && best.map_or(true, |(bd, _)| d2 < bd)
                    {
                        best = Some((d2, j));
                    }
                }
                best.map_or_else(Vector3::zeros, |(_, j)| next[j] - p)
            })
            .collect()
    }

    fn random_cloud(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_bit_for_bit() {
        for seed in 0..8u64 {
            let mut rng = crate::rng::rng_for(seed, crate::rng::Stream::Sampling, 99);
            let cur = random_cloud(&mut rng, 300, 8.0);
            let next = random_cloud(&mut rng, 280, 8.0);
            for radius in [0.3, 1.0, 3.0] {
                let fast = nn_flow_between(&cur, &next, radius).unwrap();
                let slow = brute_force_flow(&cur, &next, radius);
                assert_eq!(fast, slow, "seed {seed} radius {radius}");
            }
        }
    }

    #[test]
    fn equal_distance_prefers_lower_index() {
        let cur = vec![Point3::new(0.0, 0.0, 0.0)];
        // Two candidates both at distance 1.
        let next = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)];
        let flow = nn_flow_between(&cur, &next, 2.0).unwrap();
        assert_eq!(flow[0], Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn out_of_radius_points_get_zero_flow() {
        let cur = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0)];
        let next = vec![Point3::new(0.25, 0.0, 0.0)];
        let flow = nn_flow_between(&cur, &next, 1.0).unwrap();
        assert_eq!(flow[0], Vector3::new(0.25, 0.0, 0.0));
        assert_eq!(flow[1], Vector3::zeros());
    }

    #[test]
    fn empty_inputs_are_handled() {
        assert!(nn_flow_between(&[], &[], 1.0).unwrap().is_empty());
        let cur = vec![Point3::new(0.0, 0.0, 0.0)];
        assert_eq!(nn_flow_between(&cur, &[], 1.0).unwrap(), vec![Vector3::zeros()]);
        assert!(matches!(nn_flow_between(&cur, &cur, 0.0), Err(FlowError::BadRadius(_))));
    }

    #[test]
    fn last_frame_uses_negated_backward_difference() {
        // One point translating +0.5 in x per frame.
        let clouds: Vec<Vec<Point3<f64>>> =
            (0..3).map(|t| vec![Point3::new(t as f64 * 0.5, 0.0, 0.0)]).collect();
        let flows = sequence_nn_flow(&clouds, 1.0).unwrap();
        assert_eq!(flows[0][0], Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(flows[1][0], Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(flows[2][0], Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn single_frame_sequence_is_all_zero() {
        let clouds = vec![vec![Point3::new(1.0, 2.0, 3.0)]];
        let flows = sequence_nn_flow(&clouds, 1.0).unwrap();
        assert_eq!(flows[0][0], Vector3::zeros());
    }

    #[test]
    fn flow_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow_000000.bin");
        // Dyadic values survive the f32 file format exactly.
        let flow = vec![Vector3::new(0.25, -0.5, 0.0078125), Vector3::zeros()];
        write_flow(&path, &flow).unwrap();
        assert_eq!(read_flow(&path).unwrap(), flow);
    }
}
