//! Feature importance and importance-driven feature selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::features::FeatureMatrix;
use crate::learners::gbm::boost;
use crate::learners::{predict, Estimator, GbmParams, LearnerParams, TrainedModel};
use crate::task::{MetricSpec, Task, TimeBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    SplitGain,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    pub kind: ImportanceKind,
    pub baseline_score: Option<f64>,
    pub metric: MetricSpec,
}

impl ImportanceVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.scores[i])
    }

    /// Names by descending score; ties keep input order.
    pub fn ranking(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.names.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.names[i].clone()).collect()
    }
}

/// Total split gain per feature across every tree and fold.
pub fn gain_importance(model: &TrainedModel) -> Result<ImportanceVector> {
    Ok(ImportanceVector {
        names: model.feature_names.clone(),
        scores: model.split_gains()?,
        kind: ImportanceKind::SplitGain,
        baseline_score: None,
        metric: model.task.metric,
    })
}

/// FNV-1a of the name, mixed into the seed; stable across builds.
fn feature_seed(seed: u64, name: &str) -> u64 {
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    seed ^ h
}

/// Drop in `metric` when one column of `valid` is shuffled (one repeat).
/// Each column's shuffle seed derives from `seed` and the column name, so
/// results do not depend on column order.
pub fn permutation_importance(
    model: &TrainedModel,
    valid: &FeatureMatrix,
    y: &[f64],
    metric: MetricSpec,
    seed: u64,
) -> Result<ImportanceVector> {
    if !metric.is_valid_for(model.task.kind) {
        return Err(LamaError::Config(format!(
            "metric {metric} does not apply to {} tasks",
            model.task.kind
        )));
    }
    if valid.n_rows == 0 || valid.n_rows != y.len() {
        return Err(LamaError::InvalidInput(
            "permutation importance needs a non-empty validation table aligned with its target".into(),
        ));
    }
    let x = valid.select_columns(&model.feature_names)?;
    let baseline = metric.score(y, predict(model, &x)?.view());
    // columns no tree splits on give exactly zero without a refit
    let unused: Vec<bool> = match model.split_gains() {
        Ok(g) => g.iter().map(|v| *v == 0.0).collect(),
        Err(_) => vec![false; x.n_features()],
    };
    let scores: Vec<f64> = (0..x.n_features())
        .into_par_iter()
        .map(|j| -> Result<f64> {
            if unused[j] {
                return Ok(0.0);
            }
            let mut shuffled = x.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(feature_seed(seed, &x.names[j]));
            shuffled.columns[j].shuffle(&mut rng);
            let s = metric.score(y, predict(model, &shuffled)?.view());
            Ok(baseline - s)
        })
        .collect::<Result<_>>()?;
    Ok(ImportanceVector {
        names: x.names,
        scores,
        kind: ImportanceKind::Permutation,
        baseline_score: Some(baseline),
        metric,
    })
}

/// Features with importance strictly above zero, in input order.
pub fn cutoff_select(importances: &ImportanceVector) -> Vec<String> {
    importances
        .names
        .iter()
        .zip(&importances.scores)
        .filter(|(_, &s)| s > 0.0)
        .map(|(n, _)| n.clone())
        .collect()
}

/// A learner forward selection can refit on feature subsets.
pub trait FitProcedure: Sync {
    fn fit(&self, train: &FeatureMatrix, y: &[f64], valid: &FeatureMatrix, valid_y: &[f64]) -> Result<TrainedModel>;
}

/// Single boosted model, early-stopped on the validation rows.
pub struct GbmProcedure {
    pub task: Task,
    pub params: GbmParams,
    pub budget: TimeBudget,
}

impl FitProcedure for GbmProcedure {
    fn fit(&self, train: &FeatureMatrix, y: &[f64], valid: &FeatureMatrix, valid_y: &[f64]) -> Result<TrainedModel> {
        let start = Instant::now();
        let (est, _) = boost(train, y, Some((valid, valid_y)), &self.task, &self.params, &self.budget)?;
        Ok(TrainedModel::single(
            self.params.flavor.tag(),
            &self.task,
            train.names.clone(),
            Estimator::Gbm(est),
            LearnerParams::Gbm(self.params.clone()),
            start.elapsed().as_secs_f64(),
        ))
    }
}

/// Block count forward selection aims for by default.
pub const DEFAULT_BLOCKS: usize = 20;

pub fn default_block_size(n_features: usize) -> usize {
    n_features.div_ceil(DEFAULT_BLOCKS).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStep {
    pub features: Vec<String>,
    pub score: f64,
    pub accepted: bool,
    /// Best score after this step.
    pub baseline_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub out_feats: Vec<String>,
    pub baseline_score: f64,
    pub block_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSelection {
    pub importances: ImportanceVector,
    pub state: SelectionState,
    pub steps: Vec<BlockStep>,
}

impl ForwardSelection {
    pub fn kept(&self) -> &[String] {
        &self.state.out_feats
    }
}

/// Importance-based forward selection: rank by permutation importance of a
/// model fit on every feature, then add blocks of `block_size` features in
/// rank order, keeping a block only when the validation score strictly
/// improves.
#[allow(clippy::too_many_arguments)]
pub fn forward_select(
    train: &FeatureMatrix,
    train_y: &[f64],
    valid: &FeatureMatrix,
    valid_y: &[f64],
    learner: &dyn FitProcedure,
    block_size: usize,
    metric: MetricSpec,
    seed: u64,
) -> Result<ForwardSelection> {
    if train.n_features() == 0 {
        return Err(LamaError::InvalidInput("forward selection needs at least one feature".into()));
    }
    if block_size == 0 {
        return Err(LamaError::Config("block size must be >= 1".into()));
    }
    let full = learner.fit(train, train_y, valid, valid_y)?;
    let importances = permutation_importance(&full, valid, valid_y, metric, seed)?;
    let ranking = importances.ranking();
    let mut state = SelectionState {
        out_feats: Vec::new(),
        baseline_score: f64::NEG_INFINITY,
        block_size,
    };
    let mut steps = Vec::new();
    for block in ranking.chunks(block_size) {
        let mut candidate = state.out_feats.clone();
        candidate.extend(block.iter().cloned());
        let xt = train.select_columns(&candidate)?;
        let xv = valid.select_columns(&candidate)?;
        let model = learner.fit(&xt, train_y, &xv, valid_y)?;
        let score = metric.score(valid_y, predict(&model, &xv)?.view());
        let accepted = score > state.baseline_score;
        if accepted {
            state.out_feats = candidate;
            state.baseline_score = score;
        }
        steps.push(BlockStep {
            features: block.to_vec(),
            score,
            accepted,
            baseline_score: state.baseline_score,
        });
    }
    Ok(ForwardSelection {
        importances,
        state,
        steps,
    })
}
