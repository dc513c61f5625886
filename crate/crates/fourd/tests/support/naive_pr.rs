//! Quadratic-time precision-recall oracle and an exhaustive optimal
//! matcher, both deliberately structured nothing like the production
//! implementations.

/// Average precision by full rescans: precision and recall are recomputed
/// from scratch for every prefix of the verdict list, and the envelope at
/// each true positive's recall level is a fresh maximum over all points.
pub fn naive_ap(verdicts: &[Option<bool>], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let kept: Vec<bool> = verdicts.iter().flatten().copied().collect();
    let stats: Vec<(f64, f64)> = (1..=kept.len())
        .map(|k| {
            let tp = kept[..k].iter().filter(|&&v| v).count();
            (tp as f64 / k as f64, tp as f64 / n_gt as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &is_tp) in kept.iter().enumerate() {
        if !is_tp {
            continue;
        }
        let recall = stats[i].1;
        let best = stats
            .iter()
            .filter(|s| s.1 >= recall)
            .map(|s| s.0)
            .fold(0.0, f64::max);
        ap += (recall - prev_recall) * best;
        prev_recall = recall;
    }
    ap
}

/// Final recall of the verdict list.
pub fn naive_ar(verdicts: &[Option<bool>], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let tp = verdicts.iter().flatten().filter(|&&v| v).count();
    tp as f64 / n_gt as f64
}

/// Maximum achievable number of matched pairs with overlap above the
/// threshold, by exhaustive assignment. Exponential; callers keep the
/// instance sizes tiny.
pub fn optimal_match_count(iou: &[Vec<f64>], threshold: f64) -> usize {
    fn go(iou: &[Vec<f64>], threshold: f64, det: usize, used: &mut Vec<bool>) -> usize {
        if det == iou.len() {
            return 0;
        }
        // Leave this detection unmatched.
        let mut best = go(iou, threshold, det + 1, used);
        for g in 0..used.len() {
            if !used[g] && iou[det][g] > threshold {
                used[g] = true;
                best = best.max(1 + go(iou, threshold, det + 1, used));
                used[g] = false;
            }
        }
        best
    }
    let n_gt = iou.first().map_or(0, Vec::len);
    go(iou, threshold, 0, &mut vec![false; n_gt])
}
