//! From per-sample probabilities to detected boxes and scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum run length kept as a detection box; single-sample flicker is noise.
pub const DEFAULT_MIN_BOX_LEN: usize = 2;

/// A contiguous interval predicted to contain one systolic complex.
/// `start` and `end` are inclusive sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub start: usize,
    pub end: usize,
    /// Highest probability inside the box.
    pub peak_prob: f64,
}

/// `out[i] = 1 iff probs[i] > tau` (strict, so `tau = 1` never fires on
/// sigmoid outputs).
pub fn threshold_mask(probs: &[f64], tau: f64) -> Vec<u8> {
    probs.iter().map(|&p| (p > tau) as u8).collect()
}

/// Maximal runs of ones at least `min_len` long, as `(start, end)` inclusive
/// spans ordered by start.
pub fn mask_to_boxes(mask: &[u8], min_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, run_start) {
            (1, None) => run_start = Some(i),
            (0, Some(s)) => {
                if i - s >= min_len {
                    out.push((s, i - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        if mask.len() - s >= min_len {
            out.push((s, mask.len() - 1));
        }
    }
    out
}

/// Threshold, extract runs, attach the per-box probability peak.
pub fn detect_boxes(probs: &[f64], tau: f64, min_len: usize) -> Vec<DetectionBox> {
    let mask = threshold_mask(probs, tau);
    mask_to_boxes(&mask, min_len)
        .into_iter()
        .map(|(start, end)| DetectionBox {
            start,
            end,
            peak_prob: probs[start..=end]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

/// Greedy one-to-one matching of boxes to ground-truth AO points in index
/// order: a box scores a true positive when it contains a still-unmatched AO.
/// Boxes must be sorted and non-overlapping, AO indices sorted. Identities
/// `tp + fn == |ao|` and `tp + fp == |boxes|` hold exactly.
pub fn match_detections(boxes: &[(usize, usize)], ao_indices: &[usize]) -> Result<(usize, usize, usize)> {
    for &(s, e) in boxes {
        if s > e {
            return Err(Error::Contract(format!("box ({s},{e}) has start > end")));
        }
    }
    for pair in boxes.windows(2) {
        if pair[1].0 <= pair[0].1 {
            return Err(Error::Contract(format!(
                "boxes overlap or are unsorted at ({},{}) / ({},{})",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            )));
        }
    }

    let mut tp = 0usize;
    let mut ai = 0usize;
    for &(start, end) in boxes {
        // skip AO points before this box; they can no longer match anything
        while ai < ao_indices.len() && ao_indices[ai] < start {
            ai += 1;
        }
        if ai < ao_indices.len() && ao_indices[ai] <= end {
            tp += 1;
            ai += 1;
        }
    }
    let fp = boxes.len() - tp;
    let fn_ = ao_indices.len() - tp;
    Ok((tp, fp, fn_))
}

/// Precision/recall/F1 for one unit of evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Degenerate denominators yield 0 so reports stay total.
pub fn compute_metrics(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Metrics {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// F1 from precision and recall; agrees with the count form when P + R > 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-user counts and scores plus the equal-weight mean over users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_user: BTreeMap<String, Metrics>,
    /// Mean of per-user precision/recall/F1 (each user weighted equally);
    /// the count fields hold pooled totals.
    pub aggregate: Metrics,
}

impl MetricsReport {
    pub fn from_per_user(per_user: BTreeMap<String, Metrics>) -> Self {
        let n = per_user.len().max(1) as f64;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let (mut p, mut r, mut f1) = (0.0, 0.0, 0.0);
        for m in per_user.values() {
            tp += m.tp;
            fp += m.fp;
            fn_ += m.fn_;
            p += m.precision;
            r += m.recall;
            f1 += m.f1;
        }
        let aggregate = Metrics {
            tp,
            fp,
            fn_,
            precision: p / n,
            recall: r / n,
            f1: f1 / n,
        };
        MetricsReport { per_user, aggregate }
    }

    /// CSV rows: `subject_id,tp,fp,fn,precision,recall,f1` plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id,tp,fp,fn,precision,recall,f1\n");
        for (user, m) in &self.per_user {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                user, m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "mean,{},{},{},{:.6},{:.6},{:.6}\n",
            a.tp, a.fp, a.fn_, a.precision, a.recall, a.f1
        ));
        out
    }
}

/// Default threshold grid: 0.05 steps over [0.05, 0.95].
pub fn default_tau_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Pick the threshold maximizing pooled F1 over validation windows; ties go
/// to the lowest tau (favoring recall). `windows` pairs each probability
/// trace with its ground-truth AO indices (window-relative).
pub fn select_threshold(
    windows: &[(Vec<f64>, Vec<usize>)],
    grid: &[f64],
    min_len: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("threshold selection needs a non-empty validation set".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let mut best_tau = grid[0];
    let mut best_f1 = -1.0;
    for &tau in grid {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (probs, ao) in windows {
            let boxes: Vec<(usize, usize)> = detect_boxes(probs, tau, min_len)
                .iter()
                .map(|b| (b.start, b.end))
                .collect();
            let (t, f, n) = match_detections(&boxes, ao)?;
            tp += t;
            fp += f;
            fn_ += n;
        }
        let f1 = compute_metrics(tp, fp, fn_).f1;
        if f1 > best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_mask(&[0.2, 0.7, 0.9], 0.5), vec![0, 1, 1]);
        assert_eq!(threshold_mask(&[0.99, 0.5], 1.0), vec![0, 0]);
    }

    #[test]
    fn boxes_drop_short_runs() {
        let boxes = mask_to_boxes(&[0, 1, 1, 0, 1, 0], 2);
        assert_eq!(boxes, vec![(1, 2)]);
        assert!(mask_to_boxes(&[0, 0, 0], 2).is_empty());
    }

    #[test]
    fn boxes_match_rle_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let mask: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen_range(0..2)).collect();
            let min_len = rng.gen_range(1..4);
            let fast = mask_to_boxes(&mask, min_len);
            // run-length-encoding oracle
            let mut slow = Vec::new();
            let mut i = 0;
            while i < mask.len() {
                if mask[i] == 1 {
                    let mut j = i;
                    while j < mask.len() && mask[j] == 1 {
                        j += 1;
                    }
                    if j - i >= min_len {
                        slow.push((i, j - 1));
                    }
                    i = j;
                } else {
                    i += 1;
                }
            }
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn matching_examples() {
        assert_eq!(match_detections(&[(10, 14)], &[12]).unwrap(), (1, 0, 0));
        assert_eq!(match_detections(&[], &[5, 50, 500]).unwrap(), (0, 0, 3));
        // two AO in one box: one-to-one keeps the identities exact
        assert_eq!(match_detections(&[(0, 9)], &[2, 7]).unwrap(), (1, 0, 1));
    }

    #[test]
    fn overlapping_boxes_are_contract_error() {
        assert!(matches!(
            match_detections(&[(0, 5), (5, 9)], &[1]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn metrics_paper_rows() {
        // Table I CEBS row: P 0.95, R 0.93 -> F1 0.94.
        assert!((f1_from_pr(0.95, 0.93) - 0.94).abs() < 0.005);
        // Multi-source row: P 0.95, R 0.98 -> F1 0.96.
        assert!((f1_from_pr(0.95, 0.98) - 0.96).abs() < 0.005);
        let zero = compute_metrics(0, 0, 0);
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_probs_select_lowest_tau() {
        // probabilities equal to the ground-truth mask: every tau works,
        // tie-break returns the smallest grid value
        let probs = vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let ao = vec![2, 6];
        let tau = select_threshold(&[(probs, ao)], &default_tau_grid(), 2).unwrap();
        assert!((tau - 0.05).abs() < 1e-12);
    }

    #[test]
    fn constant_half_probs_select_below_half() {
        let probs = vec![0.5; 64];
        let ao = vec![10, 40];
        let tau = select_threshold(&[(probs, ao)], &default_tau_grid(), 2).unwrap();
        assert!(tau < 0.5);
    }

    #[test]
    fn empty_validation_set_errors() {
        assert!(select_threshold(&[], &default_tau_grid(), 2).is_err());
    }

    proptest! {
        #[test]
        fn positive_count_non_increasing_in_tau(
            probs in proptest::collection::vec(0.0f64..1.0, 1..128)
        ) {
            let mut prev = usize::MAX;
            for k in 0..=20 {
                let tau = k as f64 * 0.05;
                let count = threshold_mask(&probs, tau).iter().map(|&m| m as usize).sum::<usize>();
                prop_assert!(count <= prev);
                prev = count;
            }
        }

        #[test]
        fn f1_formulas_agree(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let m = compute_metrics(tp, fp, fn_);
            if m.precision + m.recall > 0.0 {
                prop_assert!((f1_from_pr(m.precision, m.recall) - m.f1).abs() < 1e-12);
            }
            prop_assert_eq!(m.tp + m.fn_, tp + fn_);
            prop_assert_eq!(m.tp + m.fp, tp + fp);
        }
    }
}
