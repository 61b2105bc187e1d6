//! Adjusted Rand Index between a predicted clustering and per-pixel
//! multi-label ground truth.
//!
//! Overlap pixels (more than one ground-truth bit set) are always excluded;
//! with `include_bg = false`, background pixels (no bits set) are excluded
//! too. The score is computed from the pair-counting contingency table.

use crate::error::{CaeError, Result};
use std::collections::HashMap;

fn comb2(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        n as f64 * (n as f64 - 1.0) / 2.0
    }
}

/// ARI over the retained pixels of one image.
pub fn ari(pred: &[usize], truth: &[u8], include_bg: bool) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CaeError::ShapeMismatch(format!(
            "pred {} pixels vs truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let retained: Vec<usize> = (0..pred.len())
        .filter(|&i| truth[i].count_ones() <= 1 && (include_bg || truth[i] != 0))
        .collect();
    if retained.len() < 2 {
        return Err(CaeError::InvalidArgument(format!(
            "ARI needs at least 2 retained pixels, got {}",
            retained.len()
        )));
    }

    let mut contingency: HashMap<(u8, usize), usize> = HashMap::new();
    let mut row: HashMap<u8, usize> = HashMap::new();
    let mut col: HashMap<usize, usize> = HashMap::new();
    for &i in &retained {
        *contingency.entry((truth[i], pred[i])).or_insert(0) += 1;
        *row.entry(truth[i]).or_insert(0) += 1;
        *col.entry(pred[i]).or_insert(0) += 1;
    }

    let sum_cells: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = row.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = col.values().map(|&c| comb2(c)).sum();
    let pairs = comb2(retained.len());

    let expected = sum_rows * sum_cols / pairs;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() == 0.0 {
        // Both partitions trivial: perfect agreement by convention.
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Count overlap pixels (excluded from every ARI computation).
pub fn overlap_pixels(truth: &[u8]) -> usize {
    truth.iter().filter(|l| l.count_ones() > 1).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent O(n^2) oracle over all pixel pairs.
    fn ari_pair_oracle(pred: &[usize], truth: &[u8], include_bg: bool) -> f64 {
        let retained: Vec<usize> = (0..pred.len())
            .filter(|&i| truth[i].count_ones() <= 1 && (include_bg || truth[i] != 0))
            .collect();
        let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
        for (a, &i) in retained.iter().enumerate() {
            for &j in retained.iter().skip(a + 1) {
                let same_true = truth[i] == truth[j];
                let same_pred = pred[i] == pred[j];
                match (same_true, same_pred) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (n11 * n00 - n10 * n01) / denom
    }

    #[test]
    fn perfect_match_scores_one() {
        let truth = vec![1u8, 1, 2, 2, 0, 0];
        let pred = vec![5usize, 5, 9, 9, 1, 1];
        assert_eq!(ari(&pred, &truth, true).unwrap(), 1.0);
        assert_eq!(ari(&pred, &truth, false).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_over_two_equal_classes_is_chance() {
        let truth = vec![1u8, 1, 2, 2];
        let pred = vec![0usize; 4];
        let v = ari(&pred, &truth, true).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn overlap_pixels_are_always_excluded() {
        // Third pixel overlaps (two bits); flipping its prediction must not
        // change the score.
        let truth = vec![1u8, 1, 0b11, 2, 2];
        let mut pred = vec![0usize, 0, 0, 1, 1];
        let a = ari(&pred, &truth, true).unwrap();
        pred[2] = 7;
        let b = ari(&pred, &truth, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(overlap_pixels(&truth), 1);
    }

    #[test]
    fn too_few_retained_pixels_error() {
        let truth = vec![0u8, 0, 0b11];
        let pred = vec![0usize, 1, 2];
        assert!(ari(&pred, &truth, false).is_err());
        assert!(ari(&pred, &truth[..1].to_vec(), true).is_err());
    }

    #[test]
    fn matches_pair_counting_oracle_on_random_instances() {
        let mut rng = crate::rng::stream_rng(2024, crate::rng::Stream::Noise, 0);
        for case in 0..200 {
            let n = rng.gen_range(10..=50);
            let truth: Vec<u8> = (0..n)
                .map(|_| match rng.gen_range(0..5u8) {
                    0 => 0,
                    1 => 1,
                    2 => 2,
                    3 => 4,
                    _ => 0b11, // overlap
                })
                .collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4usize)).collect();
            for include_bg in [true, false] {
                let retained = truth
                    .iter()
                    .filter(|l| l.count_ones() <= 1 && (include_bg || **l != 0))
                    .count();
                if retained < 2 {
                    continue;
                }
                let fast = ari(&pred, &truth, include_bg).unwrap();
                let slow = ari_pair_oracle(&pred, &truth, include_bg);
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "case {case}: {fast} vs {slow}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn invariant_under_predicted_label_permutation(
            labels in proptest::collection::vec(0u8..4, 8..40),
            preds in proptest::collection::vec(0usize..4, 8..40),
            swap_a in 0usize..4,
            swap_b in 0usize..4,
        ) {
            let n = labels.len().min(preds.len());
            let truth = &labels[..n];
            let pred = &preds[..n];
            let retained = truth.iter().filter(|l| l.count_ones() <= 1).count();
            prop_assume!(retained >= 2);
            let renamed: Vec<usize> = pred
                .iter()
                .map(|&p| {
                    if p == swap_a { swap_b } else if p == swap_b { swap_a } else { p }
                })
                .collect();
            let a = ari(pred, truth, true).unwrap();
            let b = ari(&renamed, truth, true).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
