//! Small MLP with analytic gradients for the point segmenter.
//!
//! Forward: input -> tanh -> tanh -> linear, four outputs per point. The
//! first three outputs vote for the displacement from the point to its
//! instance center; the fourth is a foreground logit.
//!
//! Loss: `L = L_center + cls_weight * L_cls` where `L_center` is the mean
//! L1 error of the vote over foreground points (zero when the batch has
//! none) and `L_cls` is a focal binary cross-entropy over all points with
//! probabilities clamped to [1e-7, 1 - 1e-7]. Gradients treat the clamp
//! as a flat region.

use crate::ckpt::{Array, Checkpoint, CkptError, KIND_SEGMENTER};
use crate::rng::{rng_for, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::path::Path;

pub const OUT_DIM: usize = 4;
const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

/// Same shapes as the parameters; used for gradients and momentum.
pub type Grads = SegNet;

impl SegNet {
    /// Uniform init in +-1/sqrt(fan_in), seeded per layer.
    pub fn init(input_dim: usize, hidden: usize, seed: u64, salt: u64) -> Self {
        let layer = |rows: usize, cols: usize, idx: u64| {
            let mut rng = rng_for(seed, Stream::WeightInit, salt.wrapping_mul(31).wrapping_add(idx));
            let bound = 1.0 / (cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        Self {
            w1: layer(hidden, input_dim, 0),
            b1: DVector::zeros(hidden),
            w2: layer(hidden, hidden, 1),
            b2: DVector::zeros(hidden),
            w3: layer(OUT_DIM, hidden, 2),
            b3: DVector::zeros(OUT_DIM),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
            w3: DMatrix::zeros(self.w3.nrows(), self.w3.ncols()),
            b3: DVector::zeros(self.b3.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    /// The six parameter arrays in a fixed order, flattened. Gradients use
    /// the same shapes, so equal indices address the same coordinate.
    pub fn param_slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ]
    }

    /// `x` is n x input_dim; returns n x 4 raw outputs.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (h1, h2, y) = self.forward_cached(x);
        let _ = (h1, h2);
        y
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut h1 = x * self.w1.transpose();
        for mut row in h1.row_iter_mut() {
            row += self.b1.transpose();
        }
        h1.apply(|v| *v = v.tanh());
        let mut h2 = &h1 * self.w2.transpose();
        for mut row in h2.row_iter_mut() {
            row += self.b2.transpose();
        }
        h2.apply(|v| *v = v.tanh());
        let mut y = &h2 * self.w3.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b3.transpose();
        }
        (h1, h2, y)
    }

    /// Elementwise update: `self += rhs * scale`.
    pub fn axpy(&mut self, scale: f64, rhs: &Self) {
        self.w1.zip_apply(&rhs.w1, |a, b| *a += scale * b);
        self.b1.zip_apply(&rhs.b1, |a, b| *a += scale * b);
        self.w2.zip_apply(&rhs.w2, |a, b| *a += scale * b);
        self.b2.zip_apply(&rhs.b2, |a, b| *a += scale * b);
        self.w3.zip_apply(&rhs.w3, |a, b| *a += scale * b);
        self.b3.zip_apply(&rhs.b3, |a, b| *a += scale * b);
    }

    pub fn scale(&mut self, s: f64) {
        for m in [&mut self.w1, &mut self.w2, &mut self.w3] {
            m.apply(|v| *v *= s);
        }
        for v in [&mut self.b1, &mut self.b2, &mut self.b3] {
            v.apply(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for m in [&self.w1, &self.w2, &self.w3] {
            sq += m.iter().map(|v| v * v).sum::<f64>();
        }
        for v in [&self.b1, &self.b2, &self.b3] {
            sq += v.iter().map(|x| x * x).sum::<f64>();
        }
        sq.sqrt()
    }

    /// Quantizes every parameter through f32. Training ends with this so
    /// that a saved checkpoint reloads to the identical model.
    pub fn quantize_f32(&mut self) {
        for m in [&mut self.w1, &mut self.w2, &mut self.w3] {
            m.apply(|v| *v = *v as f32 as f64);
        }
        for v in [&mut self.b1, &mut self.b2, &mut self.b3] {
            v.apply(|x| *x = *x as f32 as f64);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        let mat = |m: &DMatrix<f64>| {
            // Row-major serialization.
            let mut data = Vec::with_capacity(m.len());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    data.push(m[(r, c)] as f32);
                }
            }
            Array::matrix(m.nrows(), m.ncols(), data)
        };
        let vec = |v: &DVector<f64>| Array::vector(v.iter().map(|&x| x as f32).collect());
        let ckpt = Checkpoint {
            kind: KIND_SEGMENTER,
            arrays: vec![
                mat(&self.w1),
                vec(&self.b1),
                mat(&self.w2),
                vec(&self.b2),
                mat(&self.w3),
                vec(&self.b3),
            ],
        };
        crate::ckpt::save(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self, CkptError> {
        let ckpt = crate::ckpt::load(path, KIND_SEGMENTER)?;
        let mal = |d: &str| CkptError::Malformed {
            path: path.display().to_string(),
            detail: d.to_string(),
        };
        if ckpt.arrays.len() != 6 {
            return Err(mal("expected 6 arrays"));
        }
        let mat = |a: &Array| -> Result<DMatrix<f64>, CkptError> {
            if a.shape.len() != 2 {
                return Err(mal("expected a matrix"));
            }
            let (r, c) = (a.shape[0] as usize, a.shape[1] as usize);
            Ok(DMatrix::from_fn(r, c, |i, j| a.data[i * c + j] as f64))
        };
        let vec = |a: &Array| -> Result<DVector<f64>, CkptError> {
            if a.shape.len() != 1 {
                return Err(mal("expected a vector"));
            }
            Ok(DVector::from_iterator(a.data.len(), a.data.iter().map(|&x| x as f64)))
        };
        Ok(Self {
            w1: mat(&ckpt.arrays[0])?,
            b1: vec(&ckpt.arrays[1])?,
            w2: mat(&ckpt.arrays[2])?,
            b2: vec(&ckpt.arrays[3])?,
            w3: mat(&ckpt.arrays[4])?,
            b3: vec(&ckpt.arrays[5])?,
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls_weight: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls_weight: 5.0, focal_gamma: 2.0, focal_alpha: 0.8 }
    }
}

/// One training batch: features, per-point foreground flag, and center
/// votes (targets are only read where `foreground` is true).
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub foreground: Vec<bool>,
    pub center_target: Vec<[f64; 3]>,
}

/// Focal binary cross-entropy of one point, and its gradient in the
/// pre-clamp probability.
fn focal_term(p_raw: f64, positive: bool, w: &LossWeights) -> (f64, f64) {
    let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let clamped = p_raw < PROB_CLAMP || p_raw > 1.0 - PROB_CLAMP;
    let (g, a) = (w.focal_gamma, w.focal_alpha);
    let (loss, dp);
    if positive {
        loss = -a * (1.0 - p).powf(g) * p.ln();
        dp = -a * (-g * (1.0 - p).powf(g - 1.0) * p.ln() + (1.0 - p).powf(g) / p);
    } else {
        loss = -(1.0 - a) * p.powf(g) * (1.0 - p).ln();
        dp = -(1.0 - a) * (g * p.powf(g - 1.0) * (1.0 - p).ln() - p.powf(g) / (1.0 - p));
    }
    (loss, if clamped { 0.0 } else { dp })
}

/// Loss and analytic parameter gradients over a batch.
pub fn loss_and_grad(net: &SegNet, batch: &Batch, w: &LossWeights) -> (f64, Grads) {
    let n = batch.x.nrows();
    assert!(n > 0, "empty batch");
    assert_eq!(batch.foreground.len(), n);
    assert_eq!(batch.center_target.len(), n);
    let (h1, h2, y) = net.forward_cached(&batch.x);

    let m = batch.foreground.iter().filter(|&&f| f).count();
    let mut dy = DMatrix::zeros(n, OUT_DIM);
    let mut center_loss = 0.0;
    let mut cls_loss = 0.0;
    for r in 0..n {
        if batch.foreground[r] && m > 0 {
            for k in 0..3 {
                let resid = y[(r, k)] - batch.center_target[r][k];
                center_loss += resid.abs() / m as f64;
                dy[(r, k)] = resid.signum() / m as f64;
            }
        }
        let z = y[(r, 3)];
        let s = sigmoid(z);
        let (l, dp) = focal_term(s, batch.foreground[r], w);
        cls_loss += l / n as f64;
        // dp/dz of the raw sigmoid; the clamp already zeroed dp if active.
        dy[(r, 3)] = w.cls_weight * dp * s * (1.0 - s) / n as f64;
    }
    let loss = center_loss + w.cls_weight * cls_loss;

    // Backprop through linear -> tanh -> linear -> tanh -> linear.
    let dw3 = dy.transpose() * &h2;
    let db3 = DVector::from_iterator(OUT_DIM, dy.row_sum().iter().copied());
    let dh2 = &dy * &net.w3;
    let mut dz2 = dh2;
    dz2.zip_apply(&h2, |d, h| *d *= 1.0 - h * h);
    let dw2 = dz2.transpose() * &h1;
    let db2 = DVector::from_iterator(net.b2.len(), dz2.row_sum().iter().copied());
    let dh1 = &dz2 * &net.w2;
    let mut dz1 = dh1;
    dz1.zip_apply(&h1, |d, h| *d *= 1.0 - h * h);
    let dw1 = dz1.transpose() * &batch.x;
    let db1 = DVector::from_iterator(net.b1.len(), dz1.row_sum().iter().copied());

    (loss, Grads { w1: dw1, b1: db1, w2: dw2, b2: db2, w3: dw3, b3: db3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn focal_loss_reference_values() {
        let w = LossWeights::default();
        // Hand-derived: -0.8 * 0.25 * ln(0.5) and -0.2 * 0.25 * ln(0.5).
        let (pos, _) = focal_term(0.5, true, &w);
        let (neg, _) = focal_term(0.5, false, &w);
        assert_relative_eq!(pos, 0.138629436111989, max_relative = 1e-12);
        assert_relative_eq!(neg, 0.0346573590279973, max_relative = 1e-12);
        // Confident correct predictions cost almost nothing.
        let (easy, _) = focal_term(0.999, true, &w);
        assert!(easy < 1e-5);
    }

    #[test]
    fn clamp_freezes_gradient() {
        let w = LossWeights::default();
        let (_, dp) = focal_term(1e-9, true, &w);
        assert_eq!(dp, 0.0);
        let (_, dp) = focal_term(1.0, false, &w);
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn empty_foreground_batch_has_zero_center_loss() {
        let net = SegNet::init(5, 8, 3, 0);
        let batch = Batch {
            x: DMatrix::from_fn(4, 5, |r, c| (r + c) as f64 * 0.1),
            foreground: vec![false; 4],
            center_target: vec![[0.0; 3]; 4],
        };
        let w = LossWeights::default();
        let (loss, _) = loss_and_grad(&net, &batch, &w);
        // Only the classification term remains.
        let y = net.forward(&batch.x);
        let mut expect = 0.0;
        for r in 0..4 {
            expect += focal_term(sigmoid(y[(r, 3)]), false, &w).0 / 4.0;
        }
        assert_relative_eq!(loss, w.cls_weight * expect, max_relative = 1e-12);
    }

    #[test]
    fn save_load_round_trips_quantized_net() {
        let mut net = SegNet::init(19, 16, 5, 1);
        net.quantize_f32();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.ckpt");
        net.save(&path).unwrap();
        let back = SegNet::load(&path).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn init_is_deterministic_and_salt_sensitive() {
        assert_eq!(SegNet::init(19, 16, 5, 1), SegNet::init(19, 16, 5, 1));
        assert_ne!(SegNet::init(19, 16, 5, 1), SegNet::init(19, 16, 5, 2));
        assert_ne!(SegNet::init(19, 16, 5, 1), SegNet::init(19, 16, 6, 1));
    }
}
