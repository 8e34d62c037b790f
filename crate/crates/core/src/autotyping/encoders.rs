//! Frequency, out-of-fold target and quantile encoders over integer codes.
//!
//! Codes are dense category indices; negative codes (missing) and codes not
//! seen during fitting fall back to the encoder default.

use serde::{Deserialize, Serialize};

use super::gini::indicator;
use crate::error::{LamaError, Result};
use crate::task::{Task, TaskKind};
use crate::validation::FoldAssignment;

/// Maps each code to its training occurrence count; unseen codes map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEncoder {
    counts: Vec<f64>,
}

impl FrequencyEncoder {
    pub fn fit(codes: &[i32]) -> Self {
        let card = codes.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut counts = vec![0.0; card];
        for &c in codes.iter().filter(|&&c| c >= 0) {
            counts[c as usize] += 1.0;
        }
        FrequencyEncoder { counts }
    }

    pub fn encode(&self, code: i32) -> f64 {
        if code < 0 {
            return 0.0;
        }
        self.counts.get(code as usize).copied().unwrap_or(0.0)
    }

    pub fn transform(&self, codes: &[i32]) -> Vec<f64> {
        codes.iter().map(|&c| self.encode(c)).collect()
    }
}

/// Fits a frequency encoder and returns it with the encoded training column.
pub fn freq_encode(codes: &[i32]) -> (FrequencyEncoder, Vec<f64>) {
    let enc = FrequencyEncoder::fit(codes);
    let encoded = enc.transform(codes);
    (enc, encoded)
}

/// Smoothed mean encoding:
/// `(sum_y(value) + alpha * prior) / (count(value) + alpha)`, where the prior
/// is the mean of the rows the statistics came from. Values without
/// statistics encode as the prior.
fn smoothed(sum: f64, count: f64, prior: f64, alpha: f64) -> f64 {
    if count + alpha <= 0.0 {
        prior
    } else {
        (sum + alpha * prior) / (count + alpha)
    }
}

/// Per-code target statistics over the whole training set, for inference.
/// One output per class for multiclass, a single output otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoder {
    alpha: f64,
    priors: Vec<f64>,
    sums: Vec<Vec<f64>>,
    counts: Vec<f64>,
}

impl TargetEncoder {
    pub fn fit(codes: &[i32], targets: &[Vec<f64>], alpha: f64) -> Self {
        let card = codes.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut counts = vec![0.0; card];
        let mut sums = vec![vec![0.0; card]; targets.len()];
        let mut totals = vec![0.0; targets.len()];
        let mut n = 0.0;
        for (r, &c) in codes.iter().enumerate() {
            for (t, target) in targets.iter().enumerate() {
                totals[t] += target[r];
            }
            n += 1.0;
            if c >= 0 {
                counts[c as usize] += 1.0;
                for (t, target) in targets.iter().enumerate() {
                    sums[t][c as usize] += target[r];
                }
            }
        }
        let priors = totals.iter().map(|s| if n > 0.0 { s / n } else { 0.0 }).collect();
        TargetEncoder {
            alpha,
            priors,
            sums,
            counts,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.priors.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn encode(&self, code: i32, output: usize) -> f64 {
        let prior = self.priors[output];
        if code < 0 || code as usize >= self.counts.len() {
            return prior;
        }
        let c = code as usize;
        smoothed(self.sums[output][c], self.counts[c], prior, self.alpha)
    }

    pub fn transform(&self, codes: &[i32]) -> Vec<Vec<f64>> {
        (0..self.n_outputs())
            .map(|o| codes.iter().map(|&c| self.encode(c, o)).collect())
            .collect()
    }
}

/// Targets the encoders average: the target itself, or one indicator per class.
pub fn encoding_targets(task: &Task, y: &[f64]) -> Vec<Vec<f64>> {
    match task.kind {
        TaskKind::Multiclass => (0..task.n_classes).map(|k| indicator(y, k)).collect(),
        _ => vec![y.to_vec()],
    }
}

/// Out-of-group mean encoding of one target. Each row is encoded from the
/// rows whose group id differs from its own; the prior is the mean target of
/// those same rows, so a row's own target never reaches its encoding.
pub fn oof_mean_encode(codes: &[i32], target: &[f64], groups: &[i32], alpha: f64) -> Result<Vec<f64>> {
    if codes.len() != target.len() || codes.len() != groups.len() {
        return Err(LamaError::LengthMismatch {
            expected: codes.len(),
            found: if target.len() != codes.len() {
                target.len()
            } else {
                groups.len()
            },
        });
    }
    if alpha < 0.0 {
        return Err(LamaError::InvalidInput(format!("smoothing must be >= 0, got {alpha}")));
    }
    let card = codes.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let min_g = groups.iter().copied().min().unwrap_or(0);
    let n_groups = groups.iter().copied().max().map_or(0, |m| (m - min_g + 1) as usize);
    let gi = |g: i32| (g - min_g) as usize;

    let mut group_sum = vec![0.0; n_groups];
    let mut group_n = vec![0.0; n_groups];
    let mut cell_sum = vec![0.0; card * n_groups];
    let mut cell_n = vec![0.0; card * n_groups];
    for r in 0..codes.len() {
        let g = gi(groups[r]);
        group_sum[g] += target[r];
        group_n[g] += 1.0;
        if codes[r] >= 0 {
            let c = codes[r] as usize;
            cell_sum[c * n_groups + g] += target[r];
            cell_n[c * n_groups + g] += 1.0;
        }
    }
    // Sum the other groups instead of subtracting the own one: subtraction
    // would let the row's target leak through rounding.
    let others = |sums: &[f64], g: usize| -> f64 { (0..sums.len()).filter(|&h| h != g).map(|h| sums[h]).sum() };
    let rest_sum: Vec<f64> = (0..n_groups).map(|g| others(&group_sum, g)).collect();
    let rest_n: Vec<f64> = (0..n_groups).map(|g| others(&group_n, g)).collect();
    let mut rest_cell_sum = vec![0.0; card * n_groups];
    let mut rest_cell_n = vec![0.0; card * n_groups];
    for c in 0..card {
        let row = c * n_groups..(c + 1) * n_groups;
        for g in 0..n_groups {
            rest_cell_sum[c * n_groups + g] = others(&cell_sum[row.clone()], g);
            rest_cell_n[c * n_groups + g] = others(&cell_n[row.clone()], g);
        }
    }
    let out = (0..codes.len())
        .map(|r| {
            let g = gi(groups[r]);
            let prior = if rest_n[g] > 0.0 { rest_sum[g] / rest_n[g] } else { 0.0 };
            if codes[r] < 0 {
                return prior;
            }
            let c = codes[r] as usize;
            let n = rest_cell_n[c * n_groups + g];
            let s = rest_cell_sum[c * n_groups + g];
            if n <= 0.0 {
                prior
            } else {
                smoothed(s, n, prior, alpha)
            }
        })
        .collect();
    Ok(out)
}

/// Out-of-fold target encoding: one column for binary/regression targets,
/// one per class for multiclass.
pub fn oof_target_encode(
    codes: &[i32],
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    if folds.n_rows() != codes.len() {
        return Err(LamaError::LengthMismatch {
            expected: codes.len(),
            found: folds.n_rows(),
        });
    }
    encoding_targets(task, y)
        .iter()
        .map(|t| oof_mean_encode(codes, t, &folds.fold_of_row, alpha))
        .collect()
}

/// Bin edges at empirical quantiles k/q, deduplicated, excluding the minimum.
pub fn quantile_edges(values: &[f64], q: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let mut edges: Vec<f64> = (1..q).map(|k| sorted[(k * n) / q]).filter(|&e| e > min).collect();
    edges.dedup();
    edges
}

/// Bin index = number of edges not above the value; missing values get -1.
pub fn quantile_discretize(values: &[f64], q: usize) -> Result<Vec<i32>> {
    if q < 2 {
        return Err(LamaError::InvalidInput(format!("bin count must be >= 2, got {q}")));
    }
    let edges = quantile_edges(values, q);
    Ok(values
        .iter()
        .map(|v| {
            if v.is_nan() {
                -1
            } else {
                edges.partition_point(|e| e <= v) as i32
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{CvKind, CvScheme};
    use proptest::prelude::*;

    fn folds(v: Vec<i32>) -> FoldAssignment {
        let k = v.iter().copied().max().unwrap() as usize + 1;
        FoldAssignment {
            fold_of_row: v,
            k,
            scheme: CvScheme::new(CvKind::Custom, k, 0),
            expanding: false,
            warnings: vec![],
        }
    }

    fn codes_of(cells: &[&str]) -> (Vec<i32>, Vec<String>) {
        let mut dict: Vec<String> = cells.iter().map(|s| s.to_string()).collect();
        dict.sort();
        dict.dedup();
        let codes = cells
            .iter()
            .map(|c| dict.iter().position(|d| d == c).unwrap() as i32)
            .collect();
        (codes, dict)
    }

    #[test]
    fn frequency_counts() {
        let (codes, _) = codes_of(&["a", "a", "b"]);
        assert_eq!(freq_encode(&codes).1, vec![2.0, 2.0, 1.0]);
        let (codes, _) = codes_of(&["a", "b", "c"]);
        assert_eq!(freq_encode(&codes).1, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn frequency_unseen_is_zero() {
        let (codes, _) = codes_of(&["a", "a", "b"]);
        let (enc, _) = freq_encode(&codes);
        // "d" is not in the training dictionary -> code -1
        assert_eq!(enc.encode(-1), 0.0);
        assert_eq!(enc.encode(17), 0.0);
    }

    #[test]
    fn oof_constant_category() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let enc = oof_target_encode(&[0, 0, 0, 0], &y, &Task::binary(), &folds(vec![0, 0, 1, 1]), 0.0)
            .unwrap();
        assert_eq!(enc[0], vec![0.5; 4]);
    }

    #[test]
    fn oof_two_values() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let (codes, _) = codes_of(&["u", "v", "u", "v"]);
        let enc = oof_target_encode(&codes, &y, &Task::binary(), &folds(vec![0, 0, 1, 1]), 0.0).unwrap();
        assert_eq!(enc[0], vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn oof_smoothed_by_hand() {
        // Row 0 (u, fold A): outside A are rows 2 (u, 1) and 3 (v, 0).
        // prior = 0.5; u: sum 1, count 1 -> (1 + 2*0.5) / (1 + 2) = 2/3.
        // Row 1 (v, fold A): v outside is row 3 (y=0) -> (0 + 1) / 3 = 1/3.
        // Fold B mirrors: row 2 (u) sees row 0 (1) -> 2/3; row 3 (v) sees row 1 (0) -> 1/3.
        let y = [1.0, 0.0, 1.0, 0.0];
        let (codes, _) = codes_of(&["u", "v", "u", "v"]);
        let enc = oof_target_encode(&codes, &y, &Task::binary(), &folds(vec![0, 0, 1, 1]), 2.0).unwrap();
        let expected = [2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (a, b) in enc[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn oof_length_mismatch() {
        assert!(oof_target_encode(&[0, 1], &[0.0, 1.0], &Task::binary(), &folds(vec![0, 1, 1]), 0.0).is_err());
    }

    #[test]
    fn multiclass_one_column_per_class() {
        let y = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let enc = oof_target_encode(
            &[0, 1, 2, 0, 1, 2],
            &y,
            &Task::multiclass(3),
            &folds(vec![0, 0, 0, 1, 1, 1]),
            0.0,
        )
        .unwrap();
        assert_eq!(enc.len(), 3);
        assert_eq!(enc[0], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn target_encoder_full_stats() {
        let enc = TargetEncoder::fit(&[0, 0, 1], &[vec![1.0, 0.0, 1.0]], 0.0);
        assert_eq!(enc.encode(0, 0), 0.5);
        assert_eq!(enc.encode(1, 0), 1.0);
        assert!((enc.encode(-1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((enc.encode(5, 0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_median_split() {
        let v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        assert_eq!(quantile_discretize(&v, 2).unwrap(), vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn quantile_constant_and_missing() {
        assert_eq!(quantile_discretize(&[3.0; 5], 4).unwrap(), vec![0; 5]);
        assert_eq!(quantile_discretize(&[1.0, f64::NAN, 2.0], 2).unwrap(), vec![0, -1, 1]);
        assert!(quantile_discretize(&[1.0], 1).is_err());
    }

    #[test]
    fn quantile_ties_merge_bins() {
        // 70% zeros, then 1, 2, 3: quantile edges at k/4 are 0, 0, 1 -> one effective edge
        let mut v = vec![0.0; 7];
        v.extend([1.0, 2.0, 3.0]);
        let bins = quantile_discretize(&v, 4).unwrap();
        // brute force: bins equal the number of distinct edges <= value
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let mut raw_edges: Vec<f64> = (1..4).map(|k| sorted[k * 10 / 4]).collect();
        raw_edges.retain(|&e| e > 0.0);
        raw_edges.dedup();
        assert_eq!(raw_edges, vec![1.0]);
        let distinct: std::collections::BTreeSet<i32> = bins.iter().copied().collect();
        assert!(distinct.len() < 4);
        assert_eq!(distinct.len(), 2);
        assert!(bins[..7].iter().all(|&b| b == 0));
    }

    proptest! {
        #[test]
        fn own_target_never_leaks(
            rows in prop::collection::vec((0i32..4, 0u8..2, 0i32..3), 3..40),
            flip in 0usize..40,
            alpha in 0.0f64..5.0,
        ) {
            let codes: Vec<i32> = rows.iter().map(|r| r.0).collect();
            let mut y: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
            let groups: Vec<i32> = rows.iter().map(|r| r.2).collect();
            let i = flip % rows.len();
            let before = oof_mean_encode(&codes, &y, &groups, alpha).unwrap();
            y[i] = 1.0 - y[i];
            let after = oof_mean_encode(&codes, &y, &groups, alpha).unwrap();
            prop_assert_eq!(before[i], after[i]);
        }

        #[test]
        fn bins_are_monotone(values in prop::collection::vec(-100i32..100, 1..80), q in 2usize..12) {
            let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
            let bins = quantile_discretize(&v, q).unwrap();
            let distinct: std::collections::BTreeSet<i32> = bins.iter().copied().collect();
            prop_assert!(distinct.len() <= q);
            for a in 0..v.len() {
                for b in 0..v.len() {
                    if v[a] <= v[b] {
                        prop_assert!(bins[a] <= bins[b]);
                    }
                }
            }
        }
    }
}
