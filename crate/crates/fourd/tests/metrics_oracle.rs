//! Cross-checks of the detection metrics against brute-force oracles:
//! exact PR-curve agreement on seeded random instances, greedy matching
//! versus exhaustive optimal assignment, and AP monotonicity.

mod support;

use fourd::eval::{ap_ar, evaluate_2d, match_greedy, Frame2DEval, MAX_DETECTIONS_PER_FRAME};
use fourd::geom::{bbox2d_iou, BBox2D};
use fourd::rng::{rng_for, Stream};
use proptest::prelude::*;
use rand::Rng;
use support::naive_pr::{naive_ap, naive_ar, optimal_match_count};

fn random_box(rng: &mut impl Rng, score: f64) -> BBox2D {
    let x1 = rng.gen_range(0.0..300.0);
    let y1 = rng.gen_range(0.0..200.0);
    let w = rng.gen_range(5.0..80.0);
    let h = rng.gen_range(5.0..80.0);
    BBox2D::new(x1, y1, x1 + w, y1 + h, score).unwrap()
}

fn random_frames(seed: u64) -> Vec<Frame2DEval> {
    let mut rng = rng_for(seed, Stream::SceneLayout, 17);
    let n_frames = rng.gen_range(1..=5);
    (0..n_frames)
        .map(|_| {
            let n_gt = rng.gen_range(0..=10);
            let n_det = rng.gen_range(0..=10);
            let gts: Vec<BBox2D> = (0..n_gt).map(|_| random_box(&mut rng, 1.0)).collect();
            let detections: Vec<BBox2D> = (0..n_det)
                .map(|_| {
                    let score = rng.gen_range(0.01..1.0);
                    // Half the detections hug a gt so TPs actually occur.
                    if !gts.is_empty() && rng.gen_bool(0.5) {
                        let g = &gts[rng.gen_range(0..gts.len())];
                        let dx = rng.gen_range(-3.0..3.0);
                        let dy = rng.gen_range(-3.0..3.0);
                        BBox2D::new(g.x1 + dx, g.y1 + dy, g.x2 + dx, g.y2 + dy, score)
                            .unwrap()
                    } else {
                        random_box(&mut rng, score)
                    }
                })
                .collect();
            Frame2DEval { detections, gts }
        })
        .collect()
}

/// Pools matched verdicts exactly like the evaluator does, reusing only
/// the matcher itself.
fn pooled_verdicts(frames: &[Frame2DEval]) -> (Vec<Option<bool>>, usize) {
    let mut entries: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for (fi, frame) in frames.iter().enumerate() {
        n_gt += frame.gts.len();
        let mut keep: Vec<usize> = (0..frame.detections.len()).collect();
        keep.sort_by(|&a, &b| {
            frame.detections[b]
                .score
                .partial_cmp(&frame.detections[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        keep.truncate(MAX_DETECTIONS_PER_FRAME);
        let scores: Vec<f64> = keep.iter().map(|&i| frame.detections[i].score).collect();
        let m = match_greedy(
            &scores,
            frame.gts.len(),
            |d, g| bbox2d_iou(&frame.detections[keep[d]], &frame.gts[g]),
            0.5,
        );
        for (local, &orig) in keep.iter().enumerate() {
            entries.push((scores[local], fi, orig, m.det_match[local].is_some()));
        }
    }
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    (entries.into_iter().map(|e| Some(e.3)).collect(), n_gt)
}

#[test]
fn ap_matches_the_brute_force_pr_curve_exactly() {
    let mut nonzero = 0;
    for seed in 0..60u64 {
        let frames = random_frames(seed);
        let (verdicts, n_gt) = pooled_verdicts(&frames);
        let (ap, ar) = ap_ar(&verdicts, n_gt);
        assert_eq!(ap, naive_ap(&verdicts, n_gt), "seed {seed}");
        assert_eq!(ar, naive_ar(&verdicts, n_gt), "seed {seed}");
        let full = evaluate_2d(&frames);
        assert_eq!(full.ap50, ap, "seed {seed}: evaluator pools differently");
        assert_eq!(full.ar50, ar, "seed {seed}");
        if ap > 0.0 {
            nonzero += 1;
        }
    }
    assert!(nonzero > 20, "oracle exercised only trivial curves ({nonzero})");
}

#[test]
fn greedy_matching_never_beats_optimal_and_ties_when_unambiguous() {
    let mut rng = rng_for(3, Stream::SceneLayout, 23);
    for case in 0..300 {
        let n_det = rng.gen_range(0..=4usize);
        let n_gt = rng.gen_range(0..=4usize);
        let iou: Vec<Vec<f64>> = (0..n_det)
            .map(|_| (0..n_gt).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let scores: Vec<f64> = (0..n_det).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = match_greedy(&scores, n_gt, |d, g| iou[d][g], 0.5);
        let greedy = m.det_match.iter().flatten().count();
        let optimal = optimal_match_count(&iou, 0.5);
        assert!(greedy <= optimal, "case {case}: greedy {greedy} > optimal {optimal}");
    }
    // Unambiguous layouts: each detection overlaps exactly one gt, and no
    // two detections share a gt. Greedy must then find every pair.
    for case in 0..100 {
        let n = rng.gen_range(1..=4usize);
        let mut iou = vec![vec![0.0; n]; n];
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        for d in 0..n {
            iou[d][perm[d]] = rng.gen_range(0.55..1.0);
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = match_greedy(&scores, n, |d, g| iou[d][g], 0.5);
        let greedy = m.det_match.iter().flatten().count();
        assert_eq!(greedy, optimal_match_count(&iou, 0.5), "case {case}");
        assert_eq!(greedy, n, "case {case}: a pair was missed");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_a_top_scored_tp_never_lowers_ap(
        verdicts in proptest::collection::vec(any::<bool>(), 0..40),
        extra_gt in 1usize..10,
    ) {
        let tp_count = verdicts.iter().filter(|&&v| v).count();
        let n_gt = tp_count + extra_gt;
        let base: Vec<Option<bool>> = verdicts.iter().map(|&v| Some(v)).collect();
        let mut grown = vec![Some(true)];
        grown.extend(base.iter().copied());
        let (ap_before, _) = ap_ar(&base, n_gt);
        let (ap_after, _) = ap_ar(&grown, n_gt);
        prop_assert!(ap_after >= ap_before - 1e-12,
            "ap {ap_before} -> {ap_after}");
    }

    #[test]
    fn adding_a_false_positive_never_raises_ap(
        verdicts in proptest::collection::vec(any::<bool>(), 0..40),
        position_salt in any::<u64>(),
        extra_gt in 1usize..10,
    ) {
        let tp_count = verdicts.iter().filter(|&&v| v).count();
        let n_gt = tp_count + extra_gt;
        let base: Vec<Option<bool>> = verdicts.iter().map(|&v| Some(v)).collect();
        let pos = (position_salt as usize) % (base.len() + 1);
        let mut grown = base.clone();
        grown.insert(pos, Some(false));
        let (ap_before, _) = ap_ar(&base, n_gt);
        let (ap_after, _) = ap_ar(&grown, n_gt);
        prop_assert!(ap_after <= ap_before + 1e-12,
            "ap {ap_before} -> {ap_after} after FP at {pos}");
    }
}
