//! Task descriptors, metrics and the time budget shared by every stage.

use std::fmt;
use std::time::{Duration, Instant};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass => "multiclass",
            TaskKind::Regression => "regression",
        };
        f.write_str(s)
    }
}

/// Metric to maximize. Losses are negated so larger is always better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpec {
    RocAuc,
    NegLogloss,
    NegRmse,
    R2,
}

impl MetricSpec {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Binary => MetricSpec::RocAuc,
            TaskKind::Multiclass => MetricSpec::NegLogloss,
            TaskKind::Regression => MetricSpec::NegRmse,
        }
    }

    pub fn is_valid_for(self, kind: TaskKind) -> bool {
        match self {
            MetricSpec::RocAuc => kind == TaskKind::Binary,
            MetricSpec::NegLogloss => kind != TaskKind::Regression,
            MetricSpec::NegRmse | MetricSpec::R2 => kind == TaskKind::Regression,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricSpec::RocAuc => "roc_auc",
            MetricSpec::NegLogloss => "neg_logloss",
            MetricSpec::NegRmse => "neg_rmse",
            MetricSpec::R2 => "r2",
        }
    }

    /// Scores predictions against `y`.
    ///
    /// `pred` has one column for binary (probability of class 1) and
    /// regression tasks, and one probability column per class for multiclass.
    pub fn score(self, y: &[f64], pred: ArrayView2<'_, f64>) -> f64 {
        debug_assert_eq!(y.len(), pred.nrows());
        match self {
            MetricSpec::RocAuc => roc_auc(y, pred.column(0).iter().copied()),
            MetricSpec::NegLogloss => {
                if pred.ncols() == 1 {
                    -binary_logloss(y, pred.column(0).iter().copied())
                } else {
                    -multiclass_logloss(y, pred)
                }
            }
            MetricSpec::NegRmse => -rmse(y, pred.column(0).iter().copied()),
            MetricSpec::R2 => r2(y, pred.column(0).iter().copied()),
        }
    }

    /// Scores only the listed rows.
    pub fn score_rows(self, y: &[f64], pred: ArrayView2<'_, f64>, rows: &[usize]) -> f64 {
        let sub_y: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let sub_pred = pred.select(ndarray::Axis(0), rows);
        self.score(&sub_y, sub_pred.view())
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    /// Number of classes; 2 for binary, 0 for regression.
    pub n_classes: usize,
    pub metric: MetricSpec,
}

impl Task {
    pub fn binary() -> Self {
        Task {
            kind: TaskKind::Binary,
            n_classes: 2,
            metric: MetricSpec::RocAuc,
        }
    }

    pub fn multiclass(n_classes: usize) -> Self {
        Task {
            kind: TaskKind::Multiclass,
            n_classes,
            metric: MetricSpec::NegLogloss,
        }
    }

    pub fn regression() -> Self {
        Task {
            kind: TaskKind::Regression,
            n_classes: 0,
            metric: MetricSpec::NegRmse,
        }
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Result<Self> {
        if !metric.is_valid_for(self.kind) {
            return Err(LamaError::Config(format!(
                "metric {metric} is not valid for {} tasks",
                self.kind
            )));
        }
        self.metric = metric;
        Ok(self)
    }

    /// Width of a prediction matrix for this task.
    pub fn output_width(&self) -> usize {
        match self.kind {
            TaskKind::Multiclass => self.n_classes,
            _ => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        self.kind != TaskKind::Regression
    }
}

/// Wall-clock budget. `remaining()` never goes below zero.
#[derive(Debug, Clone, Copy)]
pub struct TimeBudget {
    total: Duration,
    started_at: Instant,
}

impl TimeBudget {
    pub fn new(total: Duration) -> Self {
        TimeBudget {
            total,
            started_at: Instant::now(),
        }
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Self::new(Duration::from_secs_f64(secs.max(0.0)))
    }

    pub fn unlimited() -> Self {
        // ~31 years is enough for anyone.
        Self::new(Duration::from_secs(1 << 30))
    }

    pub fn total(&self) -> Duration {
        self.total
    }

    pub fn elapsed(&self) -> Duration {
        self.started_at.elapsed()
    }

    pub fn remaining(&self) -> Duration {
        self.total.saturating_sub(self.elapsed())
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining().is_zero()
    }

    /// A budget starting now, capped by what is left of `self`.
    pub fn child(&self, limit: Duration) -> TimeBudget {
        TimeBudget::new(limit.min(self.remaining()))
    }
}

/// ROC-AUC via the rank-sum statistic; tied scores get averaged ranks.
pub fn roc_auc(y: &[f64], scores: impl Iterator<Item = f64>) -> f64 {
    let mut pairs: Vec<(f64, bool)> = scores.zip(y.iter().map(|&v| v > 0.5)).collect();
    let n_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.5;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        // ranks are 1-based: i+1 ..= j+1
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = pairs[i..=j].iter().filter(|p| p.1).count() as f64;
        rank_sum += avg_rank * pos_in_group;
        i = j + 1;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

const PROB_EPS: f64 = 1e-15;

pub fn binary_logloss(y: &[f64], p: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (&yi, pi) in y.iter().zip(p) {
        let pi = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= if yi > 0.5 { pi.ln() } else { (1.0 - pi).ln() };
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn multiclass_logloss(y: &[f64], p: ArrayView2<'_, f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let total: f64 = y
        .iter()
        .zip(p.rows())
        .map(|(&yi, row)| -row[yi as usize].clamp(PROB_EPS, 1.0).ln())
        .sum();
    total / y.len() as f64
}

pub fn rmse(y: &[f64], p: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (&yi, pi) in y.iter().zip(p) {
        total += (yi - pi) * (yi - pi);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (total / n as f64).sqrt()
    }
}

pub fn r2(y: &[f64], p: impl Iterator<Item = f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}
