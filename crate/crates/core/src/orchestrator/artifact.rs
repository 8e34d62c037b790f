//! The persisted model, inference, and the run report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{mean_oof, PhaseRecord, PresetConfig, PresetRun};
use crate::autotyping::TypingReport;
use crate::data::{Dataset, RawTable};
use crate::ensemble::{apply_blend, stack_features_from};
use crate::error::{LamaError, Result};
use crate::learners::{self, LearnerKind, TrainedModel};
use crate::selection::{ForwardSelection, ImportanceVector};
use crate::task::Task;
use crate::tuning::TrialHistory;
use crate::validation::{CvScheme, OofMatrix};

/// Bumped whenever the serialized layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// A fitted AutoML model: one or more preset runs, averaged within groups
/// of the same preset and blended across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoMLModel {
    pub format_version: u32,
    pub task: Task,
    pub target_name: String,
    pub classes: Vec<String>,
    pub runs: Vec<PresetRun>,
    /// Run indices per preset.
    pub groups: Vec<Vec<usize>>,
    pub group_weights: Vec<f64>,
    #[serde(skip)]
    pub oof: OofMatrix,
    pub oof_score: f64,
}

impl AutoMLModel {
    pub(super) fn from_runs(dataset: &Dataset, runs: Vec<PresetRun>, groups: Vec<Vec<usize>>, group_weights: Vec<f64>) -> Self {
        let task = dataset.task();
        let group_oofs: Vec<OofMatrix> = groups.iter().map(|g| mean_oof(g.iter().map(|&i| &runs[i].oof))).collect();
        let oof = if group_oofs.len() == 1 {
            group_oofs.into_iter().next().expect("one group")
        } else {
            let n = group_oofs[0].values.nrows();
            let present: Vec<bool> = (0..n).map(|r| group_oofs.iter().all(|o| o.present[r])).collect();
            let views: Vec<_> = group_oofs.iter().map(|o| o.values.view()).collect();
            let values = apply_blend(&views, &group_weights, &task).expect("group OOFs share a shape");
            OofMatrix { values, present }
        };
        let oof_score = learners::oof_score(&task, dataset.target(), &oof);
        AutoMLModel {
            format_version: FORMAT_VERSION,
            task,
            target_name: dataset.schema().target_name.clone(),
            classes: dataset.classes().to_vec(),
            runs,
            groups,
            group_weights,
            oof,
            oof_score,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| LamaError::Artifact(e.to_string()))?;
        fs::write(path, text).map_err(|source| LamaError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AutoMLModel> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LamaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<AutoMLModel> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| LamaError::Artifact(format!("not a model file: {e}")))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| LamaError::Artifact("model file has no format version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(LamaError::ArtifactVersion {
                found: found.min(u32::MAX as u64) as u32,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| LamaError::Artifact(e.to_string()))
    }

    /// Every model of every run, bottom level first.
    pub fn models(&self) -> impl Iterator<Item = &TrainedModel> {
        self.runs.iter().flat_map(|r| r.level1.iter().chain(&r.level2))
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            format_version: self.format_version,
            task: self.task,
            target_name: self.target_name.clone(),
            classes: self.classes.clone(),
            oof_score: self.oof_score,
            groups: self.groups.clone(),
            group_weights: self.group_weights.clone(),
            runs: self.runs.iter().map(RunSummary::of).collect(),
        }
    }
}

fn predict_run(run: &PresetRun, task: &Task, raw: &RawTable) -> Result<Array2<f64>> {
    let frame = run.schema.apply(raw)?;
    let linear = run.linear_pipeline.as_ref().map(|p| p.transform(&frame)).transpose()?;
    let tree = run.tree_pipeline.as_ref().map(|p| p.transform(&frame)).transpose()?;
    let level1: Vec<Array2<f64>> = run
        .level1
        .iter()
        .map(|m| {
            let x = match m.kind {
                LearnerKind::Linear => linear.as_ref(),
                LearnerKind::Gbm => tree.as_ref(),
            }
            .ok_or_else(|| LamaError::Artifact(format!("no feature pipeline for {:?}", m.learner_tag)))?;
            learners::predict(m, x)
        })
        .collect::<Result<_>>()?;
    let last = if run.level2.is_empty() {
        level1
    } else {
        let tags: Vec<String> = run.level1.iter().map(|m| m.learner_tag.clone()).collect();
        let sx = stack_features_from(&tags, &level1, task)?;
        run.level2.iter().map(|m| learners::predict(m, &sx)).collect::<Result<_>>()?
    };
    let views: Vec<_> = last.iter().map(|p| p.view()).collect();
    apply_blend(&views, &run.blend.weights, task)
}

/// Predictions for a raw table in output space: one probability column for
/// binary tasks, one per class for multiclass, the value for regression.
pub fn predict_automl(model: &AutoMLModel, raw: &RawTable) -> Result<Array2<f64>> {
    let per_run: Vec<Array2<f64>> = model
        .runs
        .iter()
        .map(|r| predict_run(r, &model.task, raw))
        .collect::<Result<_>>()?;
    let per_group: Vec<Array2<f64>> = model
        .groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                return per_run[g[0]].clone();
            }
            let mut acc = Array2::<f64>::zeros(per_run[g[0]].dim());
            for &i in g {
                acc += &per_run[i];
            }
            acc / g.len() as f64
        })
        .collect();
    let views: Vec<_> = per_group.iter().map(|p| p.view()).collect();
    apply_blend(&views, &model.group_weights, &model.task)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub tag: String,
    pub level: usize,
    pub metric_oof: f64,
    pub seconds: f64,
    pub truncated: bool,
    /// Blend weight for last-level models.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config: PresetConfig,
    pub cv: CvScheme,
    pub fold_warnings: Vec<String>,
    pub typing: TypingReport,
    pub phases: Vec<PhaseRecord>,
    pub models: Vec<ModelSummary>,
    pub selected_features: Option<Vec<String>>,
    pub importances: Option<ImportanceVector>,
    pub forward_selection: Option<ForwardSelection>,
    pub trials: BTreeMap<String, TrialHistory>,
    pub stack_levels: Vec<Vec<String>>,
    pub oof_score: f64,
    pub warnings: Vec<String>,
    pub total_seconds: f64,
}

impl RunSummary {
    fn of(run: &PresetRun) -> RunSummary {
        let last_level = if run.level2.is_empty() { 1 } else { 2 };
        let mut models = Vec::new();
        for (level, list) in [(1, &run.level1), (2, &run.level2)] {
            for (i, m) in list.iter().enumerate() {
                models.push(ModelSummary {
                    tag: m.learner_tag.clone(),
                    level,
                    metric_oof: m.metric_oof,
                    seconds: m.training_seconds,
                    truncated: m.truncated,
                    weight: (level == last_level).then(|| run.blend.weights[i]),
                });
            }
        }
        RunSummary {
            seed: run.config.seed,
            config: run.config.clone(),
            cv: run.cv.clone(),
            fold_warnings: run.diagnostics.fold_warnings.clone(),
            typing: run.typing.clone(),
            phases: run.diagnostics.phases.clone(),
            models,
            selected_features: run.selected_features.clone(),
            importances: run.diagnostics.importances.clone(),
            forward_selection: run.diagnostics.forward.clone(),
            trials: run.diagnostics.trials.clone(),
            stack_levels: run.topology.levels.clone(),
            oof_score: run.oof_score,
            warnings: run.diagnostics.warnings.clone(),
            total_seconds: run.diagnostics.total_seconds,
        }
    }
}

/// JSON run report written next to the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub task: Task,
    pub target_name: String,
    pub classes: Vec<String>,
    pub oof_score: f64,
    pub groups: Vec<Vec<usize>>,
    pub group_weights: Vec<f64>,
    pub runs: Vec<RunSummary>,
}
