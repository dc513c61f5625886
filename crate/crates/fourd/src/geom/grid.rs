//! Uniform hash grid for radius-bounded neighbor queries.
//!
//! Candidate lists are returned in ascending point-index order, so any
//! tie-breaking done by the caller is deterministic.

use nalgebra::Point3;
use std::collections::BTreeMap;

#[derive(Debug)]
pub struct GridIndex {
    cell: f64,
    map: BTreeMap<(i64, i64, i64), Vec<usize>>,
}

impl GridIndex {
    /// `cell` must be at least the query radius the caller intends to use;
    /// only the 27 cells around a query point are inspected.
    pub fn build(points: &[Point3<f64>], cell: f64) -> Self {
        assert!(cell.is_finite() && cell > 0.0, "grid cell must be positive");
        let mut map: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key_for(cell, p)).or_default().push(i);
        }
        Self { cell, map }
    }

    fn key_for(cell: f64, p: &Point3<f64>) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices of all points within one cell of `p` in every axis, sorted
    /// ascending. A superset of the points within `cell` of `p`.
    pub fn candidates_near(&self, p: &Point3<f64>) -> Vec<usize> {
        let (kx, ky, kz) = Self::key_for(self.cell, p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.map.get(&(kx + dx, ky + dy, kz + dz)) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
