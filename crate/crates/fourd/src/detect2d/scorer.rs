//! Logistic anchor scorer with validated early stopping.
//!
//! The model is a single linear layer over the 112-dim patch descriptor.
//! Training is full-batch gradient descent on the binary cross-entropy;
//! a held-out split of the labeled anchors is scored every step, and the
//! weights with the best validation loss are kept. Training stops after
//! `patience` steps without improvement or at the step budget.

use super::descriptor::DESC_DIM;
use crate::ckpt::{Array, Checkpoint, CkptError, KIND_SCORER};
use crate::rng::{rng_for, Stream};
use crate::voteseg::sigmoid;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Scorer {
    pub fn zeros() -> Self {
        Self { w: vec![0.0; DESC_DIM], b: 0.0 }
    }

    pub fn score(&self, d: &[f64; DESC_DIM]) -> f64 {
        let z: f64 = self.w.iter().zip(d.iter()).map(|(w, x)| w * x).sum::<f64>() + self.b;
        sigmoid(z)
    }

    /// Quantizes parameters through f32, mirroring what a checkpoint
    /// round trip produces.
    pub fn quantize_f32(&mut self) {
        for w in &mut self.w {
            *w = *w as f32 as f64;
        }
        self.b = self.b as f32 as f64;
    }

    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        let ckpt = Checkpoint {
            kind: KIND_SCORER,
            arrays: vec![
                Array::vector(self.w.iter().map(|&x| x as f32).collect()),
                Array::vector(vec![self.b as f32]),
            ],
        };
        crate::ckpt::save(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self, CkptError> {
        let ckpt = crate::ckpt::load(path, KIND_SCORER)?;
        let mal = |d: &str| CkptError::Malformed {
            path: path.display().to_string(),
            detail: d.to_string(),
        };
        if ckpt.arrays.len() != 2 {
            return Err(mal("expected 2 arrays"));
        }
        if ckpt.arrays[0].data.len() != DESC_DIM || ckpt.arrays[1].data.len() != 1 {
            return Err(mal("unexpected array lengths"));
        }
        Ok(Self {
            w: ckpt.arrays[0].data.iter().map(|&x| x as f64).collect(),
            b: ckpt.arrays[1].data[0] as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerTrainConfig {
    /// Gradient-step budget; 0 trains nothing and returns zero weights.
    pub max_steps: usize,
    /// Steps without a validation improvement before stopping.
    pub patience: usize,
    /// Step size in units of the inverse curvature bound of the batch
    /// (1.0 is the classic 1/L gradient step; stable below 2.0).
    pub lr: f64,
    pub momentum: f64,
    /// Loss weight of positive samples, compensating the negative
    /// oversampling ratio.
    pub pos_weight: f64,
    /// Fraction of samples held out for validation.
    pub val_frac: f64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        Self { max_steps: 300, patience: 25, lr: 1.0, momentum: 0.9, pos_weight: 3.0, val_frac: 0.2 }
    }
}

/// One labeled anchor sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub descriptor: [f64; DESC_DIM],
    pub positive: bool,
}

fn bce_loss(scorer: &Scorer, samples: &[&Sample], pos_weight: f64) -> f64 {
    let mut loss = 0.0;
    for s in samples {
        let p = scorer.score(&s.descriptor).clamp(1e-12, 1.0 - 1e-12);
        loss -= if s.positive { pos_weight * p.ln() } else { (1.0 - p).ln() };
    }
    loss / samples.len().max(1) as f64
}

/// Trains on the samples, holding out a seeded validation split. Returns
/// the best-validation model, f32-quantized. With no samples or a zero
/// budget the zero model comes back (every anchor scores 0.5).
pub fn train_scorer(samples: &[Sample], cfg: &ScorerTrainConfig, seed: u64, salt: u64) -> Scorer {
    let mut model = Scorer::zeros();
    if samples.is_empty() || cfg.max_steps == 0 {
        return model;
    }
    // Stratified split: holding out each label separately keeps tiny
    // sample sets from producing a single-class validation fold, which
    // would reward a degenerate constant model.
    let mut rng = rng_for(seed, Stream::DatasetSplit, salt);
    let mut val: Vec<&Sample> = Vec::new();
    let mut train: Vec<&Sample> = Vec::new();
    for positive in [true, false] {
        let mut idx: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].positive == positive).collect();
        idx.shuffle(&mut rng);
        // At least one held out and one kept whenever the class has two.
        let n_val = if idx.len() < 2 {
            0
        } else {
            ((idx.len() as f64 * cfg.val_frac).round() as usize).clamp(1, idx.len() - 1)
        };
        val.extend(idx[..n_val].iter().map(|&i| &samples[i]));
        train.extend(idx[n_val..].iter().map(|&i| &samples[i]));
    }
    if train.is_empty() {
        return model;
    }
    let stop_early = !val.is_empty();

    // Mean-BCE gradients are (1/4) max |x|^2 smooth (bias included via
    // the +1, positive weighting via the factor); stepping relative to
    // that bound keeps dense descriptors from overshooting.
    let lip = 0.25
        * cfg.pos_weight.max(1.0)
        * train
            .iter()
            .map(|s| s.descriptor.iter().map(|x| x * x).sum::<f64>() + 1.0)
            .fold(1.0f64, f64::max);
    let step = cfg.lr / lip;

    let mut best = model.clone();
    let mut best_val = bce_loss(&model, &val, cfg.pos_weight);
    let mut since_best = 0usize;
    let mut vel_w = vec![0.0; DESC_DIM];
    let mut vel_b = 0.0;
    for _ in 0..cfg.max_steps {
        // Full-batch BCE gradient.
        let mut gw = vec![0.0; DESC_DIM];
        let mut gb = 0.0;
        for s in &train {
            let p = model.score(&s.descriptor);
            let err = if s.positive { cfg.pos_weight * (p - 1.0) } else { p };
            for (g, x) in gw.iter_mut().zip(s.descriptor.iter()) {
                *g += err * x;
            }
            gb += err;
        }
        let inv = 1.0 / train.len() as f64;
        for ((w, v), g) in model.w.iter_mut().zip(vel_w.iter_mut()).zip(gw.iter()) {
            *v = cfg.momentum * *v - step * g * inv;
            *w += *v;
        }
        vel_b = cfg.momentum * vel_b - step * gb * inv;
        model.b += vel_b;

        if stop_early {
            let v = bce_loss(&model, &val, cfg.pos_weight);
            if v < best_val - 1e-9 {
                best_val = v;
                best = model.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        } else {
            best = model.clone();
        }
    }
    best.quantize_f32();
    best
}
