//! Shared test oracles, kept deliberately naive and structurally different
//! from the library implementations they check.

#![allow(dead_code)]

pub mod naive_cluster;
pub mod naive_pr;

use fourd::rng::{rng_for, Stream};
use fourd::voteseg::{loss_and_grad, Batch, LossWeights, SegNet};
use nalgebra::DMatrix;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub instances: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

/// Central finite differences against the analytic gradients over every
/// parameter coordinate of freshly seeded networks and batches. Residuals
/// of the L1 center term are kept away from the kink so the derivative is
/// well defined at the evaluation point.
pub fn gradient_check(instances: usize, seed_base: u64) -> GradCheckReport {
    let h = 1e-5;
    let w = LossWeights::default();
    let mut max_rel_err: f64 = 0.0;
    let mut coords = 0usize;
    for inst in 0..instances {
        let seed = seed_base + inst as u64;
        let net = SegNet::init(fourd::voteseg::INPUT_DIM, 8, seed, 77);
        let mut rng = rng_for(seed, Stream::WeightInit, 12345);
        let n = 24;
        let x = DMatrix::from_fn(n, net.input_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let foreground: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let mut center_target: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
            .collect();
        // Push every foreground residual at least 0.05 from zero so the
        // absolute-value term is smooth in the h-neighborhood.
        let y = net.forward(&x);
        for r in 0..n {
            if foreground[r] {
                for k in 0..3 {
                    let resid = y[(r, k)] - center_target[r][k];
                    if resid.abs() < 0.05 {
                        center_target[r][k] = y[(r, k)] - 0.1;
                    }
                }
            }
        }
        let batch = Batch { x, foreground, center_target };
        let (_, analytic) = loss_and_grad(&net, &batch, &w);
        let grad_slices: Vec<Vec<f64>> =
            analytic.param_slices().iter().map(|s| s.to_vec()).collect();
        for (array_idx, grads) in grad_slices.iter().enumerate() {
            for coord in 0..grads.len() {
                let probe = |delta: f64| -> f64 {
                    let mut net2 = net.clone();
                    net2.param_slices_mut()[array_idx][coord] += delta;
                    loss_and_grad(&net2, &batch, &w).0
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let an = grads[coord];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                max_rel_err = max_rel_err.max(rel);
                coords += 1;
            }
        }
    }
    GradCheckReport { instances, coords_checked: coords, max_rel_err }
}

/// Adjusted Rand index between two labelings. Noise (-1) counts as a class
/// of its own; identical partitions give exactly 1.0.
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let classes = |xs: &[i32]| -> Vec<i32> {
        let mut v: Vec<i32> = xs.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let ca = classes(a);
    let cb = classes(b);
    let mut table = vec![vec![0u64; cb.len()]; ca.len()];
    for i in 0..n {
        let ra = ca.binary_search(&a[i]).unwrap();
        let rb = cb.binary_search(&b[i]).unwrap();
        table[ra][rb] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_a: f64 = table.iter().map(|row| c2(row.iter().sum())).sum();
    let sum_b: f64 = (0..cb.len())
        .map(|j| c2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if (max - expected).abs() < 1e-12 {
        // Degenerate: both partitions are single-class; equal iff identical.
        return if a == b { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / (max - expected)
}

/// Renumbers cluster labels by first occurrence so two labelings of the
/// same partition become identical vectors. Noise stays -1.
pub fn canonicalize_labels(labels: &[i32]) -> Vec<i32> {
    let mut map: Vec<i32> = Vec::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if l < 0 {
            out.push(-1);
            continue;
        }
        match map.iter().position(|&m| m == l) {
            Some(idx) => out.push(idx as i32),
            None => {
                map.push(l);
                out.push(map.len() as i32 - 1);
            }
        }
    }
    out
}
