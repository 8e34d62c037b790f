//! Normalized Gini between a target and a feature.
//!
//! Over all pairs i < j, with C the pairs ordered the same way by x and y and
//! D those ordered oppositely, the score is |C - D| / P where P counts pairs
//! with distinct targets. Pairs tied on x count in neither C nor D.

use crate::error::{LamaError, Result};
use crate::task::{Task, TaskKind};

/// Fenwick tree over dense ranks.
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks strictly below `idx`.
    fn count_below(&self, idx: usize) -> i64 {
        let mut i = idx;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn dense_ranks(v: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks = v
        .iter()
        .map(|x| sorted.binary_search_by(|s| s.total_cmp(x)).unwrap())
        .collect();
    (ranks, sorted.len())
}

/// Normalized Gini for a real-valued (binary or regression) target, O(n log n).
/// A constant target scores 0.
pub fn norm_gini(y: &[f64], x: &[f64]) -> Result<f64> {
    if y.len() != x.len() {
        return Err(LamaError::LengthMismatch {
            expected: y.len(),
            found: x.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(LamaError::InvalidInput(format!(
            "normalized gini needs at least 2 rows, got {n}"
        )));
    }
    let (y_rank, n_levels) = dense_ranks(y);
    let mut level_counts = vec![0i64; n_levels];
    for &r in &y_rank {
        level_counts[r] += 1;
    }
    let n_i = n as i64;
    let untied: i64 = n_i * (n_i - 1) / 2 - level_counts.iter().map(|c| c * (c - 1) / 2).sum::<i64>();
    if untied == 0 {
        return Ok(0.0);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut fenwick = Fenwick::new(n_levels);
    let mut inserted = 0i64;
    let mut concordance = 0i64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // every earlier-inserted row has strictly smaller x
        for &i in &order[start..end] {
            let r = y_rank[i];
            let below = fenwick.count_below(r);
            let at_or_below = fenwick.count_below(r + 1);
            let above = inserted - at_or_below;
            concordance += below - above;
        }
        for &i in &order[start..end] {
            fenwick.add(y_rank[i]);
            inserted += 1;
        }
        start = end;
    }
    Ok((concordance.abs() as f64 / untied as f64).clamp(0.0, 1.0))
}

/// Maximum over one-vs-rest indicator targets.
pub fn norm_gini_multiclass(y: &[f64], x: &[f64], n_classes: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for k in 0..n_classes {
        let ind = indicator(y, k);
        best = best.max(norm_gini(&ind, x)?);
    }
    Ok(best)
}

pub(crate) fn indicator(y: &[f64], class: usize) -> Vec<f64> {
    y.iter()
        .map(|&v| if v as usize == class { 1.0 } else { 0.0 })
        .collect()
}

/// Dispatches on the task: multiclass targets use the one-vs-rest maximum.
pub fn norm_gini_for_task(task: &Task, y: &[f64], x: &[f64]) -> Result<f64> {
    match task.kind {
        TaskKind::Multiclass => norm_gini_multiclass(y, x, task.n_classes),
        _ => norm_gini(y, x),
    }
}

/// Gini of an encoding that may carry one column per class. A per-class
/// encoding is scored against its own class indicator.
pub fn encoded_gini(task: &Task, y: &[f64], encoded: &[Vec<f64>]) -> Result<f64> {
    if encoded.len() == 1 {
        return norm_gini_for_task(task, y, &encoded[0]);
    }
    let mut best = 0.0f64;
    for (k, col) in encoded.iter().enumerate() {
        best = best.max(norm_gini(&indicator(y, k), col)?);
    }
    Ok(best)
}

/// O(n^2) reference count used to check the fast path.
pub fn norm_gini_pairwise(y: &[f64], x: &[f64]) -> f64 {
    let n = y.len();
    let (mut c, mut d, mut p) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            if y[i] != y[j] {
                p += 1;
            }
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > 0.0 {
                c += 1;
            } else if s < 0.0 {
                d += 1;
            }
        }
    }
    if p == 0 {
        0.0
    } else {
        (c - d).abs() as f64 / p as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_order_is_one() {
        assert_eq!(norm_gini(&[0.0, 0.0, 1.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn tied_feature_is_zero() {
        assert_eq!(norm_gini(&[0.0, 1.0, 0.0, 1.0], &[7.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn mixed_example_matches_pairwise() {
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let x = [0.2, 0.1, 0.9, 0.5, 0.7];
        // pairs with distinct y: 6; concordant 4, discordant 2 -> 2/6
        let expected = 1.0 / 3.0;
        assert!((norm_gini_pairwise(&y, &x) - expected).abs() < 1e-15);
        assert!((norm_gini(&y, &x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn errors_and_constant_target() {
        assert!(norm_gini(&[0.0], &[1.0]).is_err());
        assert!(norm_gini(&[0.0, 1.0], &[1.0]).is_err());
        assert_eq!(norm_gini(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn multiclass_takes_max() {
        let y = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let x = [0.0, 5.0, 1.0, 0.0, 5.0, 1.0];
        let g = norm_gini_multiclass(&y, &x, 3).unwrap();
        let per: Vec<f64> = (0..3)
            .map(|k| norm_gini_pairwise(&indicator(&y, k), &x))
            .collect();
        assert!((g - per.iter().cloned().fold(0.0, f64::max)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            pts in prop::collection::vec((0u8..3, -50i32..50), 2..60),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let y: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let x: Vec<f64> = pts.iter().map(|p| p.1 as f64).collect();
            let base = norm_gini(&y, &x).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((norm_gini(&y, &scaled).unwrap() - base).abs() < 1e-12);
            prop_assert!((norm_gini(&y, &neg).unwrap() - base).abs() < 1e-12);
            prop_assert!((norm_gini_pairwise(&y, &x) - base).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
