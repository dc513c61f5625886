//! Patch descriptors for anchor scoring.
//!
//! A box is divided into a 4x4 grid; each cell contributes the mean and
//! standard deviation of the three color channels plus a mean gradient
//! magnitude (16 * 7 = 112 values). The same grid over the box expanded
//! 1.75x about its center supplies context, which is what separates a
//! well-fitted box from one nested inside a larger uniform region. All
//! cell statistics come from integral images, so a descriptor costs O(1)
//! per cell regardless of box size.

use crate::sim::Image;

pub const GRID: usize = 4;
const GRID_DIM: usize = GRID * GRID * 7;
pub const DESC_DIM: usize = 2 * GRID_DIM;
/// Context box scale about the anchor center.
pub const CONTEXT_EXPAND: f64 = 1.75;

/// Integral images of one frame: per-channel sums, per-channel sums of
/// squares, and gradient-magnitude sums. Row 0 / column 0 are zero.
pub struct ImageStats {
    width: usize,
    height: usize,
    /// (width+1)*(height+1) entries each, intensity in [0, 1].
    sum: [Vec<f64>; 3],
    sum_sq: [Vec<f64>; 3],
    grad: Vec<f64>,
}

impl ImageStats {
    pub fn new(image: &Image) -> Self {
        let (w, h) = (image.width as usize, image.height as usize);
        let mut sum: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; (w + 1) * (h + 1)]);
        let mut sum_sq: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; (w + 1) * (h + 1)]);
        let mut grad = vec![0.0; (w + 1) * (h + 1)];
        let stride = w + 1;
        let lum = |x: u32, y: u32| {
            (image.value(x, y, 0) + image.value(x, y, 1) + image.value(x, y, 2)) / 3.0
        };
        for y in 0..h {
            for x in 0..w {
                // Central differences, clamped at the border.
                let xl = lum(x.saturating_sub(1) as u32, y as u32);
                let xr = lum((x + 1).min(w - 1) as u32, y as u32);
                let yu = lum(x as u32, y.saturating_sub(1) as u32);
                let yd = lum(x as u32, (y + 1).min(h - 1) as u32);
                let g = (xr - xl).abs() + (yd - yu).abs();
                let idx = (y + 1) * stride + (x + 1);
                let up = y * stride + (x + 1);
                let left = (y + 1) * stride + x;
                let diag = y * stride + x;
                for c in 0..3 {
                    let v = image.value(x as u32, y as u32, c);
                    sum[c][idx] = v + sum[c][up] + sum[c][left] - sum[c][diag];
                    sum_sq[c][idx] = v * v + sum_sq[c][up] + sum_sq[c][left] - sum_sq[c][diag];
                }
                grad[idx] = g + grad[up] + grad[left] - grad[diag];
            }
        }
        Self { width: w, height: h, sum, sum_sq, grad }
    }

    /// Sum over the half-open pixel rectangle [x1, x2) x [y1, y2).
    fn rect(&self, table: &[f64], x1: usize, y1: usize, x2: usize, y2: usize) -> f64 {
        let s = self.width + 1;
        table[y2 * s + x2] - table[y1 * s + x2] - table[y2 * s + x1] + table[y1 * s + x1]
    }

    /// Descriptor of a pixel-coordinate box: grid statistics of the box
    /// itself followed by those of its expanded context box.
    pub fn descriptor(&self, x1: f64, y1: f64, x2: f64, y2: f64) -> [f64; DESC_DIM] {
        let mut out = [0.0; DESC_DIM];
        self.grid_stats(x1, y1, x2, y2, &mut out[..GRID_DIM]);
        let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
        let (hw, hh) = ((x2 - x1) / 2.0 * CONTEXT_EXPAND, (y2 - y1) / 2.0 * CONTEXT_EXPAND);
        self.grid_stats(cx - hw, cy - hh, cx + hw, cy + hh, &mut out[GRID_DIM..]);
        out
    }

    /// One 4x4 grid of cell statistics. The box is clamped to the image;
    /// each grid cell covers at least one pixel.
    fn grid_stats(&self, x1: f64, y1: f64, x2: f64, y2: f64, out: &mut [f64]) {
        let cx1 = x1.max(0.0).min(self.width as f64 - 1.0);
        let cy1 = y1.max(0.0).min(self.height as f64 - 1.0);
        let cx2 = x2.max(cx1 + 1.0).min(self.width as f64);
        let cy2 = y2.max(cy1 + 1.0).min(self.height as f64);
        for gy in 0..GRID {
            for gx in 0..GRID {
                let px1 = cx1 + (cx2 - cx1) * gx as f64 / GRID as f64;
                let px2 = cx1 + (cx2 - cx1) * (gx + 1) as f64 / GRID as f64;
                let py1 = cy1 + (cy2 - cy1) * gy as f64 / GRID as f64;
                let py2 = cy1 + (cy2 - cy1) * (gy + 1) as f64 / GRID as f64;
                // Integer pixel bounds, non-empty by construction.
                let ix1 = px1.floor() as usize;
                let iy1 = py1.floor() as usize;
                let ix2 = (px2.ceil() as usize).clamp(ix1 + 1, self.width);
                let iy2 = (py2.ceil() as usize).clamp(iy1 + 1, self.height);
                let n = ((ix2 - ix1) * (iy2 - iy1)) as f64;
                let base = (gy * GRID + gx) * 7;
                for c in 0..3 {
                    let s = self.rect(&self.sum[c], ix1, iy1, ix2, iy2);
                    let q = self.rect(&self.sum_sq[c], ix1, iy1, ix2, iy2);
                    let mean = s / n;
                    let var = (q / n - mean * mean).max(0.0);
                    out[base + c] = mean;
                    out[base + 3 + c] = var.sqrt() * 2.0;
                }
                out[base + 6] = self.rect(&self.grad, ix1, iy1, ix2, iy2) / n * 2.0;
            }
        }
    }
}
