//! Cross-validation schemes and out-of-fold assembly.
//!
//! Fold membership is derived from one random key per row (or per group),
//! drawn from the scheme seed. Sorting by those keys makes the assignment a
//! function of (keys, labels, groups, times) only, so permuting rows together
//! with their keys permutes `fold_of_row` the same way.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Dataset};
use crate::error::{LamaError, Result};
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvKind {
    Kfold,
    StratifiedKfold,
    GroupKfold,
    Holdout,
    TimeSeries,
    Custom,
}

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvScheme {
    pub kind: CvKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub group_column: Option<String>,
    #[serde(default)]
    pub time_column: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Explicit assignment for [`CvKind::Custom`]; -1 marks train-only rows.
    #[serde(default)]
    pub custom_folds: Option<Vec<i32>>,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_holdout() -> f64 {
    0.2
}

impl CvScheme {
    pub fn new(kind: CvKind, k: usize, seed: u64) -> Self {
        CvScheme {
            kind,
            k,
            holdout_fraction: default_holdout(),
            group_column: None,
            time_column: None,
            seed,
            custom_folds: None,
        }
    }

    /// Stratified folds for classification, plain folds for regression.
    pub fn default_for(task: TaskKind, seed: u64) -> Self {
        let kind = match task {
            TaskKind::Regression => CvKind::Kfold,
            _ => CvKind::StratifiedKfold,
        };
        CvScheme::new(kind, DEFAULT_K, seed)
    }

    pub fn holdout(fraction: f64, seed: u64) -> Self {
        CvScheme {
            holdout_fraction: fraction,
            ..CvScheme::new(CvKind::Holdout, 1, seed)
        }
    }

    pub fn custom(folds: Vec<i32>) -> Self {
        CvScheme {
            custom_folds: Some(folds),
            ..CvScheme::new(CvKind::Custom, 0, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Validation fold of each row; -1 means the row is only ever trained on.
    pub fold_of_row: Vec<i32>,
    /// Number of validation folds.
    pub k: usize,
    pub scheme: CvScheme,
    /// Training rows of fold f are the rows of earlier folds (time series)
    /// instead of every row outside f.
    pub expanding: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn n_rows(&self) -> usize {
        self.fold_of_row.len()
    }

    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        let f = fold as i32;
        (0..self.n_rows())
            .filter(|&r| self.fold_of_row[r] == f)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        let f = fold as i32;
        (0..self.n_rows())
            .filter(|&r| {
                let g = self.fold_of_row[r];
                if self.expanding {
                    g < f
                } else {
                    g != f
                }
            })
            .collect()
    }

    /// Rows that receive an out-of-fold prediction.
    pub fn covered_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.fold_of_row[r] >= 0)
            .collect()
    }

    pub fn covers_all_rows(&self) -> bool {
        self.fold_of_row.iter().all(|&f| f >= 0)
    }

    /// Restriction to a subset of rows; keeps fold ids.
    pub fn select_rows(&self, rows: &[usize]) -> FoldAssignment {
        FoldAssignment {
            fold_of_row: rows.iter().map(|&r| self.fold_of_row[r]).collect(),
            ..self.clone()
        }
    }
}

/// Per-row side information a scheme may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitInputs<'a> {
    pub labels: Option<&'a [f64]>,
    pub groups: Option<&'a [u64]>,
    pub times: Option<&'a [f64]>,
}

/// Builds folds for `dataset`, reading group/time columns by name.
pub fn make_folds(scheme: &CvScheme, dataset: &Dataset) -> Result<FoldAssignment> {
    let n = dataset.n_rows();
    let labels = dataset.task().is_classification().then(|| dataset.target());
    if scheme.kind == CvKind::StratifiedKfold && labels.is_none() {
        return Err(LamaError::Config(
            "stratified folds need a classification target".into(),
        ));
    }
    let groups = match scheme.kind {
        CvKind::GroupKfold => {
            let name = scheme.group_column.as_deref().ok_or_else(|| {
                LamaError::Config("group_kfold needs cv.group_column".into())
            })?;
            Some(group_keys(dataset, name)?)
        }
        _ => None,
    };
    let times = match scheme.kind {
        CvKind::TimeSeries => {
            let name = scheme.time_column.as_deref().ok_or_else(|| {
                LamaError::Config("time_series needs cv.time_column".into())
            })?;
            Some(time_values(dataset, name)?)
        }
        _ => None,
    };
    split_rows(
        scheme,
        n,
        SplitInputs {
            labels,
            groups: groups.as_deref(),
            times: times.as_deref(),
        },
    )
}

fn group_keys(dataset: &Dataset, name: &str) -> Result<Vec<u64>> {
    let col = dataset
        .column(name)
        .ok_or_else(|| LamaError::Config(format!("group column `{name}` not found")))?;
    Ok(match &col.data {
        ColumnData::Category { codes, .. } => codes.iter().map(|&c| c as i64 as u64).collect(),
        ColumnData::Numeric { values, .. } => values.iter().map(|v| (v + 0.0).to_bits()).collect(),
    })
}

fn time_values(dataset: &Dataset, name: &str) -> Result<Vec<f64>> {
    if let Some(epochs) = dataset.datetime_source(name) {
        if epochs.iter().any(|v| v.is_nan()) {
            return Err(LamaError::Config(format!("time column `{name}` has missing values")));
        }
        return Ok(epochs.to_vec());
    }
    let col = dataset
        .column(name)
        .ok_or_else(|| LamaError::Config(format!("time column `{name}` not found")))?;
    let values = col.numeric_values().ok_or_else(|| {
        LamaError::Config(format!("time column `{name}` must be numeric or datetime"))
    })?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(LamaError::Config(format!("time column `{name}` has missing values")));
    }
    Ok(values.to_vec())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One seeded random key per row.
pub fn row_keys(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Builds folds from explicit inputs, drawing row keys from `scheme.seed`.
pub fn split_rows(scheme: &CvScheme, n: usize, inputs: SplitInputs<'_>) -> Result<FoldAssignment> {
    let keys = row_keys(n, scheme.seed);
    split_rows_with_keys(scheme, &keys, inputs)
}

/// Builds folds with caller-supplied row keys.
pub fn split_rows_with_keys(
    scheme: &CvScheme,
    keys: &[u64],
    inputs: SplitInputs<'_>,
) -> Result<FoldAssignment> {
    let n = keys.len();
    let k = scheme.k;
    let kfold_like = matches!(
        scheme.kind,
        CvKind::Kfold | CvKind::StratifiedKfold | CvKind::GroupKfold | CvKind::TimeSeries
    );
    if kfold_like {
        if k < 2 {
            return Err(LamaError::Config(format!("k must be at least 2, got {k}")));
        }
        if k > n {
            return Err(LamaError::Split(format!("k = {k} exceeds {n} rows")));
        }
    }
    for (name, len) in [
        ("labels", inputs.labels.map(<[f64]>::len)),
        ("groups", inputs.groups.map(<[u64]>::len)),
        ("times", inputs.times.map(<[f64]>::len)),
    ] {
        if let Some(len) = len {
            if len != n {
                return Err(LamaError::InvalidInput(format!(
                    "{name} length {len} does not match {n} rows"
                )));
            }
        }
    }
    let mut warnings = Vec::new();
    let mut expanding = false;
    let (fold_of_row, k_eff) = match scheme.kind {
        CvKind::Kfold => (kfold(keys, k), k),
        CvKind::StratifiedKfold => {
            let labels = inputs
                .labels
                .ok_or_else(|| LamaError::Config("stratified folds need labels".into()))?;
            match stratified(keys, labels, k) {
                Some(f) => (f, k),
                None => {
                    warnings.push(format!(
                        "a class has fewer than {k} rows; fell back to plain kfold"
                    ));
                    (kfold(keys, k), k)
                }
            }
        }
        CvKind::GroupKfold => {
            let groups = inputs
                .groups
                .ok_or_else(|| LamaError::Config("group folds need groups".into()))?;
            (group_kfold(groups, k, scheme.seed)?, k)
        }
        CvKind::Holdout => {
            let frac = scheme.holdout_fraction;
            if !(frac > 0.0 && frac < 1.0) {
                return Err(LamaError::Config(format!(
                    "holdout_fraction must be in (0, 1), got {frac}"
                )));
            }
            if n < 2 {
                return Err(LamaError::Split("holdout needs at least 2 rows".into()));
            }
            let n_valid = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
            let order = argsort_keys(keys);
            let mut folds = vec![-1; n];
            for &r in &order[..n_valid] {
                folds[r] = 0;
            }
            (folds, 1)
        }
        CvKind::TimeSeries => {
            let times = inputs
                .times
                .ok_or_else(|| LamaError::Config("time series folds need times".into()))?;
            expanding = true;
            (time_series(times, k)?, k)
        }
        CvKind::Custom => {
            let folds = scheme
                .custom_folds
                .clone()
                .ok_or_else(|| LamaError::Config("custom scheme needs custom_folds".into()))?;
            if folds.len() != n {
                return Err(LamaError::LengthMismatch {
                    expected: n,
                    found: folds.len(),
                });
            }
            if folds.iter().any(|&f| f < -1) {
                return Err(LamaError::Config("custom fold ids must be >= -1".into()));
            }
            let k_eff = folds.iter().copied().max().unwrap_or(-1) + 1;
            if k_eff < 1 {
                return Err(LamaError::Config("custom folds define no validation rows".into()));
            }
            for f in 0..k_eff {
                if !folds.contains(&f) {
                    return Err(LamaError::Config(format!("custom fold {f} is empty")));
                }
            }
            (folds, k_eff as usize)
        }
    };
    Ok(FoldAssignment {
        fold_of_row,
        k: k_eff,
        scheme: scheme.clone(),
        expanding,
        warnings,
    })
}

fn argsort_keys(keys: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

fn kfold(keys: &[u64], k: usize) -> Vec<i32> {
    let mut folds = vec![0; keys.len()];
    for (pos, r) in argsort_keys(keys).into_iter().enumerate() {
        folds[r] = (pos % k) as i32;
    }
    folds
}

/// Round-robin within each class (ordered by key); the fold counter carries
/// across classes so total fold sizes stay within one of each other.
fn stratified(keys: &[u64], labels: &[f64], k: usize) -> Option<Vec<i32>> {
    let mut by_class: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (r, &y) in labels.iter().enumerate() {
        by_class.entry((y + 0.0).to_bits()).or_default().push(r);
    }
    if by_class.values().any(|rows| rows.len() < k) {
        return None;
    }
    let mut classes: Vec<(f64, Vec<usize>)> = by_class
        .into_iter()
        .map(|(bits, rows)| (f64::from_bits(bits), rows))
        .collect();
    classes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut folds = vec![0; labels.len()];
    let mut counter = 0usize;
    for (_, mut rows) in classes {
        rows.sort_by_key(|&r| (keys[r], r));
        for r in rows {
            folds[r] = (counter % k) as i32;
            counter += 1;
        }
    }
    Some(folds)
}

/// Largest groups first, each into the currently smallest fold.
fn group_kfold(groups: &[u64], k: usize, seed: u64) -> Result<Vec<i32>> {
    let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (r, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(r);
    }
    if members.len() < k {
        return Err(LamaError::Split(format!(
            "{} groups cannot fill {k} folds",
            members.len()
        )));
    }
    let mut order: Vec<(usize, u64, u64)> = members
        .iter()
        .map(|(&g, rows)| (rows.len(), splitmix(g ^ splitmix(seed)), g))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut sizes = vec![0usize; k];
    let mut folds = vec![0; groups.len()];
    for (size, _, g) in order {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[target] += size;
        for &r in &members[&g] {
            folds[r] = target as i32;
        }
    }
    Ok(folds)
}

/// Expanding window: the time-sorted rows are cut into k + 1 blocks; block 0
/// (plus any remainder) is train-only and block j validates fold j - 1.
fn time_series(times: &[f64], k: usize) -> Result<Vec<i32>> {
    let n = times.len();
    let block = n / (k + 1);
    if block == 0 {
        return Err(LamaError::Split(format!(
            "{n} rows are too few for {k} time-series folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let head = n - k * block;
    let mut folds = vec![-1; n];
    for (pos, &r) in order.iter().enumerate().skip(head) {
        folds[r] = ((pos - head) / block) as i32;
    }
    Ok(folds)
}

/// Out-of-fold predictions with a presence mask (rows never validated are absent).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OofMatrix {
    pub values: Array2<f64>,
    pub present: Vec<bool>,
}

impl OofMatrix {
    pub fn present_rows(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|&r| self.present[r]).collect()
    }
}

/// Places each fold's predictions (rows in increasing order of that fold's
/// validation rows) back into row order.
pub fn oof_assemble(fold_predictions: &[Array2<f64>], folds: &FoldAssignment) -> Result<OofMatrix> {
    if fold_predictions.len() != folds.k {
        return Err(LamaError::InvalidInput(format!(
            "expected predictions for {} folds, got {}",
            folds.k,
            fold_predictions.len()
        )));
    }
    let width = fold_predictions.first().map_or(1, |p| p.ncols());
    let n = folds.n_rows();
    let mut values = Array2::from_elem((n, width), f64::NAN);
    let mut present = vec![false; n];
    for (f, preds) in fold_predictions.iter().enumerate() {
        let rows = folds.validation_rows(f);
        if preds.nrows() != rows.len() || preds.ncols() != width {
            return Err(LamaError::InvalidInput(format!(
                "fold {f}: predictions cover {} rows, fold has {}",
                preds.nrows(),
                rows.len()
            )));
        }
        for (i, &r) in rows.iter().enumerate() {
            values.row_mut(r).assign(&preds.row(i));
            present[r] = true;
        }
    }
    Ok(OofMatrix { values, present })
}
