//! Per-fold learners: an L2-penalized linear model and histogram gradient
//! boosting in two tree-growing flavors.

pub mod gbm;
pub mod linear;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::features::FeatureMatrix;
use crate::task::{Task, TaskKind};
use crate::validation::OofMatrix;

pub use gbm::{fit_gbm, GbmEstimator, GbmFlavor, GbmParams, Tree};
pub use linear::{fit_linear, LinearEstimator, LinearParams};

/// Tracks the best score of a maximized validation history.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_index: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience: patience.max(1),
            best: f64::NEG_INFINITY,
            best_index: 0,
            seen: 0,
        }
    }

    /// Records the next score; returns true once training should halt.
    pub fn push(&mut self, score: f64) -> bool {
        let i = self.seen;
        self.seen += 1;
        if score > self.best || self.seen == 1 {
            self.best = score;
            self.best_index = i;
        }
        i - self.best_index >= self.patience
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn best_score(&self) -> f64 {
        self.best
    }
}

/// Index of the best score, with training halting `patience` steps after it.
/// Ties keep the earliest index.
pub fn early_stop(eval_history: &[f64], patience: usize) -> usize {
    let mut stopper = EarlyStopper::new(patience);
    for &s in eval_history {
        if stopper.push(s) {
            break;
        }
    }
    stopper.best_index()
}

/// Maps raw scores (n x width) to the output space in place: sigmoid for
/// binary, softmax for multiclass, identity for regression.
pub fn link_inplace(task: &Task, scores: &mut Array2<f64>) {
    match task.kind {
        TaskKind::Binary => scores.mapv_inplace(sigmoid),
        TaskKind::Multiclass => {
            for mut row in scores.rows_mut() {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
        }
        TaskKind::Regression => {}
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Linear,
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum Estimator {
    Linear(LinearEstimator),
    Gbm(GbmEstimator),
}

impl Estimator {
    /// Output-space predictions for a matrix whose columns are already in
    /// the estimator's feature order.
    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        match self {
            Estimator::Linear(e) => e.predict(x),
            Estimator::Gbm(e) => e.predict(x),
        }
    }
}

/// Per-fold diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub validation_score: f64,
    /// Boosting iterations kept, or the grid index of the chosen penalty.
    pub best_iteration: usize,
    pub lambda: Option<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerParams {
    Linear(LinearParams),
    Gbm(GbmParams),
}

/// One logical learner: its fold estimators and out-of-fold predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub learner_tag: String,
    pub kind: LearnerKind,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub estimators: Vec<Estimator>,
    pub params: LearnerParams,
    /// Not persisted; only meaningful on the fitting side.
    #[serde(skip)]
    pub oof: OofMatrix,
    pub metric_oof: f64,
    pub training_seconds: f64,
    pub truncated: bool,
    pub folds: Vec<FoldReport>,
}

impl TrainedModel {
    /// Total split gain per feature over every tree of every fold.
    pub fn split_gains(&self) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.feature_names.len()];
        for e in &self.estimators {
            match e {
                Estimator::Gbm(g) => {
                    for (t, v) in total.iter_mut().zip(g.gain_by_feature()) {
                        *t += v;
                    }
                }
                Estimator::Linear(_) => {
                    return Err(LamaError::Unsupported(format!(
                        "split gain of linear model {:?}",
                        self.learner_tag
                    )))
                }
            }
        }
        Ok(total)
    }

    pub fn output_width(&self) -> usize {
        self.task.output_width()
    }

    /// Wraps one estimator fit outside cross-validation (no OOF).
    pub fn single(
        tag: &str,
        task: &Task,
        feature_names: Vec<String>,
        estimator: Estimator,
        params: LearnerParams,
        training_seconds: f64,
    ) -> TrainedModel {
        TrainedModel {
            learner_tag: tag.to_string(),
            kind: match estimator {
                Estimator::Linear(_) => LearnerKind::Linear,
                Estimator::Gbm(_) => LearnerKind::Gbm,
            },
            task: *task,
            feature_names,
            estimators: vec![estimator],
            params,
            oof: OofMatrix::default(),
            metric_oof: f64::NAN,
            training_seconds,
            truncated: false,
            folds: Vec::new(),
        }
    }
}

/// Mean of the fold estimators' output-space predictions. Columns of
/// `table` are matched by name; extra columns are ignored.
pub fn predict(model: &TrainedModel, table: &FeatureMatrix) -> Result<Array2<f64>> {
    let x = if table.names == model.feature_names {
        table.clone()
    } else {
        table.select_columns(&model.feature_names)?
    };
    predict_ordered(model, &x)
}

fn predict_ordered(model: &TrainedModel, x: &FeatureMatrix) -> Result<Array2<f64>> {
    if model.estimators.is_empty() {
        return Err(LamaError::InvalidInput(format!(
            "model {:?} has no estimators",
            model.learner_tag
        )));
    }
    let mut acc = Array2::<f64>::zeros((x.n_rows, model.output_width()));
    for e in &model.estimators {
        acc += &e.predict(x);
    }
    if model.estimators.len() > 1 {
        acc /= model.estimators.len() as f64;
    }
    Ok(acc)
}

/// Metric over the rows where the OOF matrix is defined.
pub fn oof_score(task: &Task, y: &[f64], oof: &OofMatrix) -> f64 {
    let rows = oof.present_rows();
    task.metric.score_rows(y, oof.values.view(), &rows)
}

pub(crate) fn score_view(task: &Task, y: &[f64], pred: ArrayView2<'_, f64>) -> f64 {
    task.metric.score(y, pred)
}
