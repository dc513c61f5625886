//! Training loop for the point segmenter: SGD with momentum, a cyclic
//! learning rate (linear rise, cosine decay), and gradient-norm clipping.
//!
//! Determinism: epoch frame order and per-frame point subsets come from
//! the training-shuffle stream salted with the caller's round; the final
//! model is quantized through f32 so a saved checkpoint reloads bitwise
//! identical.

use super::net::{loss_and_grad, Batch, SegNet};
use super::VotesegConfig;
use crate::rng::{rng_for, Stream};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

/// One frame's training material, prepared once by the caller.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    /// n x INPUT_DIM features.
    pub features: DMatrix<f64>,
    pub foreground: Vec<bool>,
    pub center_target: Vec<[f64; 3]>,
}

impl TrainFrame {
    pub fn from_batch(batch: Batch) -> Self {
        Self {
            features: batch.x,
            foreground: batch.foreground,
            center_target: batch.center_target,
        }
    }
}

/// Learning rate at `step` of `total`: linear from `lr_min` to `lr_max`
/// over the first `rise_frac`, then cosine back down to `lr_min`.
pub fn cyclic_lr(cfg: &VotesegConfig, step: usize, total: usize) -> f64 {
    assert!(total > 0);
    let rise = ((total as f64) * cfg.rise_frac).max(1.0);
    let t = step as f64;
    if t < rise {
        cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (t / rise)
    } else {
        let span = (total as f64 - rise).max(1.0);
        let u = ((t - rise) / span).min(1.0);
        cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

/// Trains a fresh network on the given frames. `salt` separates rounds
/// that retrain from scratch so their randomness does not collide.
pub fn train(frames: &[TrainFrame], cfg: &VotesegConfig, salt: u64) -> SegNet {
    let mut net = SegNet::init(super::INPUT_DIM, cfg.hidden, cfg.seed, salt);
    train_from(&mut net, frames, cfg, salt);
    net
}

/// Runs the optimization on an existing network in place.
pub fn train_from(net: &mut SegNet, frames: &[TrainFrame], cfg: &VotesegConfig, salt: u64) {
    let usable: Vec<usize> =
        (0..frames.len()).filter(|&i| frames[i].features.nrows() > 0).collect();
    if usable.is_empty() {
        net.quantize_f32();
        return;
    }
    let total_steps = cfg.epochs * usable.len();
    let weights = cfg.loss.into();
    let mut velocity = net.zeros_like();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(
            cfg.seed,
            Stream::TrainShuffle,
            salt.wrapping_mul(100_003).wrapping_add(epoch as u64),
        );
        let mut order = usable.clone();
        order.shuffle(&mut rng);
        for fi in order {
            let frame = &frames[fi];
            let batch = subsample(frame, cfg.points_per_frame, &mut rng);
            let (_, mut grads) = loss_and_grad(net, &batch, &weights);
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let lr = cyclic_lr(cfg, step, total_steps);
            velocity.scale(cfg.momentum);
            velocity.axpy(-lr, &grads);
            net.axpy(1.0, &velocity);
            step += 1;
        }
    }
    net.quantize_f32();
}

/// Takes up to `limit` points of a frame, chosen without replacement and
/// kept in ascending index order.
fn subsample(frame: &TrainFrame, limit: usize, rng: &mut impl rand::Rng) -> Batch {
    let n = frame.features.nrows();
    if n <= limit {
        return Batch {
            x: frame.features.clone(),
            foreground: frame.foreground.clone(),
            center_target: frame.center_target.clone(),
        };
    }
    let mut chosen = rand::seq::index::sample(rng, n, limit).into_vec();
    chosen.sort_unstable();
    let mut x = DMatrix::zeros(limit, frame.features.ncols());
    for (r, &i) in chosen.iter().enumerate() {
        x.set_row(r, &frame.features.row(i));
    }
    Batch {
        x,
        foreground: chosen.iter().map(|&i| frame.foreground[i]).collect(),
        center_target: chosen.iter().map(|&i| frame.center_target[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voteseg::{compute_features, make_batch, INPUT_DIM};
    use crate::cluster::LabeledCloud;
    use nalgebra::Point3;

    fn toy_frames() -> Vec<TrainFrame> {
        // Two identical frames: a compact foreground blob away from a
        // scattered background sheet.
        let mut points = Vec::new();
        let mut y = Vec::new();
        let mut d = Vec::new();
        for i in 0..30 {
            let a = (i % 6) as f64 * 0.3;
            let b = (i / 6) as f64 * 0.3;
            points.push(Point3::new(10.0 + a, 2.0 + b, 1.0));
            y.push(true);
            d.push(1u32);
        }
        for i in 0..60 {
            let a = (i % 12) as f64 * 1.1;
            let b = (i / 12) as f64 * 1.1;
            points.push(Point3::new(3.0 + a, -8.0 + b, 0.1));
            y.push(false);
            d.push(0u32);
        }
        let features = compute_features(&points);
        let labeled = LabeledCloud { y, d };
        let batch = make_batch(&points, &features, &labeled);
        vec![TrainFrame::from_batch(batch.clone()), TrainFrame::from_batch(batch)]
    }

    #[test]
    fn lr_schedule_rises_then_decays_to_min() {
        let cfg = VotesegConfig::default();
        let total = 100;
        assert!((cyclic_lr(&cfg, 0, total) - cfg.lr_min).abs() < 1e-12);
        let peak = cyclic_lr(&cfg, 40, total);
        assert!((peak - cfg.lr_max).abs() < 1e-9);
        assert!(cyclic_lr(&cfg, 20, total) > cyclic_lr(&cfg, 0, total));
        assert!(cyclic_lr(&cfg, 70, total) < peak);
        let last = cyclic_lr(&cfg, 100, total);
        assert!((last - cfg.lr_min).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic_and_salt_sensitive() {
        let frames = toy_frames();
        let cfg = VotesegConfig { hidden: 8, epochs: 3, ..VotesegConfig::default() };
        let a = train(&frames, &cfg, 1);
        let b = train(&frames, &cfg, 1);
        assert_eq!(a, b);
        let c = train(&frames, &cfg, 2);
        assert_ne!(a, c);
    }

    #[test]
    fn training_reduces_loss_and_separates_classes() {
        let frames = toy_frames();
        let cfg = VotesegConfig {
            hidden: 16,
            epochs: 250,
            lr_max: 5e-3,
            ..VotesegConfig::default()
        };
        let weights = cfg.loss.into();
        let batch = Batch {
            x: frames[0].features.clone(),
            foreground: frames[0].foreground.clone(),
            center_target: frames[0].center_target.clone(),
        };
        let init = SegNet::init(INPUT_DIM, cfg.hidden, cfg.seed, 1);
        let (loss_before, _) = loss_and_grad(&init, &batch, &weights);
        let net = train(&frames, &cfg, 1);
        let (loss_after, _) = loss_and_grad(&net, &batch, &weights);
        assert!(
            loss_after < loss_before * 0.5,
            "loss {loss_before} -> {loss_after}"
        );
        let y = net.forward(&batch.x);
        let mean_fg: f64 = (0..30).map(|r| crate::voteseg::sigmoid(y[(r, 3)])).sum::<f64>() / 30.0;
        let mean_bg: f64 =
            (30..90).map(|r| crate::voteseg::sigmoid(y[(r, 3)])).sum::<f64>() / 60.0;
        assert!(mean_fg > mean_bg + 0.2, "fg {mean_fg} vs bg {mean_bg}");
    }

    #[test]
    fn subsample_keeps_all_points_when_under_limit() {
        let frames = toy_frames();
        let mut rng = rng_for(0, Stream::TrainShuffle, 9);
        let b = subsample(&frames[0], 1000, &mut rng);
        assert_eq!(b.x.nrows(), 90);
        let b = subsample(&frames[0], 10, &mut rng);
        assert_eq!(b.x.nrows(), 10);
        assert!(b.foreground.len() == 10 && b.center_target.len() == 10);
    }
}
