//! The tabular preset: phase scheduling under a time budget, the expert and
//! tuned model roster, the stacking policy, and multi-run time utilization.

mod artifact;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autotyping::{infer_feature_kind, select_category_encoding, EncoderSpec, TypingConfig, TypingReport};
use crate::data::{ColumnData, Dataset, Schema};
use crate::ensemble::{apply_blend, blend_weights, build_stack_features, BlendWeights, StackTopology};
use crate::error::{LamaError, Result};
use crate::features::{FeatureMatrix, FeaturePipeline, FeatureView};
use crate::learners::gbm::fit_gbm_fold;
use crate::learners::{fit_gbm, fit_linear, Estimator, GbmFlavor, LearnerParams, LinearParams, TrainedModel};
use crate::selection::{
    cutoff_select, default_block_size, forward_select, permutation_importance, ForwardSelection, GbmProcedure,
    ImportanceVector,
};
use crate::task::{Task, TaskKind, TimeBudget};
use crate::tuning::{expert_params, tune_gbm, TrialHistory, MAX_TRIALS};
use crate::validation::{make_folds, CvKind, CvScheme, OofMatrix};

pub use artifact::{predict_automl, AutoMLModel, ModelSummary, RunReport, RunSummary, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    None,
    Cutoff,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackPolicy {
    /// Two levels for multiclass tasks, none otherwise.
    Auto,
    Always,
    Never,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    #[serde(default = "yes")]
    pub linear: bool,
    #[serde(default = "yes")]
    pub gbm_leaf: bool,
    #[serde(default = "yes")]
    pub gbm_sym: bool,
}

impl Default for Roster {
    fn default() -> Self {
        Roster {
            linear: true,
            gbm_leaf: true,
            gbm_sym: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetConfig {
    /// Validation scheme; stratified (classification) or plain 5-fold by default.
    pub cv: Option<CvScheme>,
    pub selection: SelectionStrategy,
    /// Forward-selection block size; derived from the feature count if absent.
    pub block_size: Option<usize>,
    pub stack_policy: StackPolicy,
    pub tuning_enabled: bool,
    pub max_trials: usize,
    pub budget_seconds: f64,
    pub seed: u64,
    pub roster: Roster,
    pub typing: TypingConfig,
}

impl Default for PresetConfig {
    fn default() -> Self {
        PresetConfig {
            cv: None,
            selection: SelectionStrategy::Cutoff,
            block_size: None,
            stack_policy: StackPolicy::Auto,
            tuning_enabled: true,
            max_trials: MAX_TRIALS,
            budget_seconds: 600.0,
            seed: 42,
            roster: Roster::default(),
            typing: TypingConfig::default(),
        }
    }
}

impl PresetConfig {
    pub fn validate(&self, task: &Task) -> Result<()> {
        if !(self.budget_seconds.is_finite() && self.budget_seconds > 0.0) {
            return Err(LamaError::Config(format!("budget must be positive, got {}", self.budget_seconds)));
        }
        if !(self.roster.linear || self.roster.gbm_leaf || self.roster.gbm_sym) {
            return Err(LamaError::Config("the roster enables no learner".into()));
        }
        if self.block_size == Some(0) {
            return Err(LamaError::Config("block size must be >= 1".into()));
        }
        if !(self.typing.alpha > 0.0) || self.typing.bins < 2 {
            return Err(LamaError::Config("typing needs alpha > 0 and at least 2 bins".into()));
        }
        if let Some(cv) = &self.cv {
            if cv.kind == CvKind::StratifiedKfold && task.kind == TaskKind::Regression {
                return Err(LamaError::Config("stratified folds need a classification task".into()));
            }
        }
        Ok(())
    }

    fn stack_wanted(&self, task: &Task) -> bool {
        match self.stack_policy {
            StackPolicy::Always => true,
            StackPolicy::Never => false,
            StackPolicy::Auto => task.kind == TaskKind::Multiclass,
        }
    }

    /// The same preset with another seed for both the folds and the learners.
    pub fn with_seed(&self, seed: u64) -> PresetConfig {
        let mut c = self.clone();
        c.seed = seed;
        if let Some(cv) = c.cv.as_mut() {
            cv.seed = seed;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Linear,
    GbmLeafExpert,
    GbmLeafTuned,
    GbmSymExpert,
    GbmSymTuned,
    Stack,
    Blend,
}

/// Fraction of the total budget held back for blending.
pub const BLEND_RESERVE: f64 = 0.05;
/// The linear phase runs even when the budget is already spent.
const MIN_LINEAR_BUDGET: Duration = Duration::from_millis(200);
/// Refit time kept aside from tuning, relative to the expert fit.
const REFIT_ALLOWANCE: f64 = 1.2;

impl Phase {
    pub fn share(self) -> f64 {
        match self {
            Phase::Linear => 0.10,
            Phase::GbmLeafExpert | Phase::GbmSymExpert => 0.15,
            Phase::GbmLeafTuned | Phase::GbmSymTuned => 0.25,
            Phase::Stack => 0.10,
            Phase::Blend => BLEND_RESERVE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Linear => "linear",
            Phase::GbmLeafExpert => "gbm_leaf_expert",
            Phase::GbmLeafTuned => "gbm_leaf_tuned",
            Phase::GbmSymExpert => "gbm_sym_expert",
            Phase::GbmSymTuned => "gbm_sym_tuned",
            Phase::Stack => "stack",
            Phase::Blend => "blend",
        }
    }

    /// The expert phase a tuned phase builds on.
    pub fn expert(self) -> Option<Phase> {
        match self {
            Phase::GbmLeafTuned => Some(Phase::GbmLeafExpert),
            Phase::GbmSymTuned => Some(Phase::GbmSymExpert),
            _ => None,
        }
    }

    fn flavor(self) -> Option<GbmFlavor> {
        match self {
            Phase::GbmLeafExpert | Phase::GbmLeafTuned => Some(GbmFlavor::LeafWise),
            Phase::GbmSymExpert | Phase::GbmSymTuned => Some(GbmFlavor::SymmetricDepthWise),
            _ => None,
        }
    }
}

/// Phases in execution order, cheapest learner first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    pub fn full(stack: bool) -> PhasePlan {
        let mut phases = vec![
            Phase::Linear,
            Phase::GbmLeafExpert,
            Phase::GbmLeafTuned,
            Phase::GbmSymExpert,
            Phase::GbmSymTuned,
        ];
        if stack {
            phases.push(Phase::Stack);
        }
        phases.push(Phase::Blend);
        PhasePlan { phases }
    }

    pub fn for_config(config: &PresetConfig, stack: bool) -> PhasePlan {
        let mut plan = PhasePlan::full(stack);
        plan.phases.retain(|p| match p {
            Phase::Linear => config.roster.linear,
            Phase::GbmLeafExpert => config.roster.gbm_leaf,
            Phase::GbmSymExpert => config.roster.gbm_sym,
            Phase::GbmLeafTuned => config.roster.gbm_leaf && config.tuning_enabled,
            Phase::GbmSymTuned => config.roster.gbm_sym && config.tuning_enabled,
            Phase::Stack | Phase::Blend => true,
        });
        plan
    }

    pub fn shares_sum(&self) -> f64 {
        self.phases.iter().map(|p| p.share()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocation {
    Run(Duration),
    Skip(String),
}

/// Time for phase `plan.phases[next]`. Shares are renormalized over the
/// phases still ahead and applied to what remains beyond the blend reserve.
/// A tuned phase is skipped when less than twice its expert's observed
/// duration remains.
pub fn allocate_time(
    total: Duration,
    remaining: Duration,
    plan: &PhasePlan,
    next: usize,
    observed: &BTreeMap<Phase, Duration>,
) -> Allocation {
    let phase = plan.phases[next];
    if phase == Phase::Blend {
        return Allocation::Run(remaining);
    }
    let reserve = total.mul_f64(BLEND_RESERVE);
    let available = remaining.saturating_sub(reserve);
    let ahead: f64 = plan.phases[next..]
        .iter()
        .filter(|p| **p != Phase::Blend)
        .map(|p| p.share())
        .sum();
    let allot = available.mul_f64(phase.share() / ahead);
    if phase == Phase::Linear {
        return Allocation::Run(allot.max(MIN_LINEAR_BUDGET));
    }
    if let Some(expert) = phase.expert() {
        let Some(&spent) = observed.get(&expert) else {
            return Allocation::Skip(format!("{} did not run", expert.name()));
        };
        if remaining < spent * 2 {
            return Allocation::Skip(format!(
                "{:.2}s left, under twice the {:.2}s expert fit",
                remaining.as_secs_f64(),
                spent.as_secs_f64()
            ));
        }
    }
    if allot.is_zero() {
        return Allocation::Skip("no time left beyond the blend reserve".into());
    }
    Allocation::Run(allot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub status: PhaseStatus,
    pub reason: Option<String>,
    pub allotted_seconds: f64,
    pub seconds: f64,
}

/// Diagnostics of one preset run. The search histories and importances are
/// report-only and are not stored in the artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunDiagnostics {
    pub phases: Vec<PhaseRecord>,
    pub warnings: Vec<String>,
    pub fold_warnings: Vec<String>,
    pub total_seconds: f64,
    #[serde(skip)]
    pub trials: BTreeMap<String, TrialHistory>,
    #[serde(skip)]
    pub importances: Option<ImportanceVector>,
    #[serde(skip)]
    pub forward: Option<ForwardSelection>,
}

impl RunDiagnostics {
    fn ran(&mut self, phase: &str, allotted: Duration, seconds: f64) {
        self.phases.push(PhaseRecord {
            phase: phase.to_string(),
            status: PhaseStatus::Ran,
            reason: None,
            allotted_seconds: allotted.as_secs_f64(),
            seconds,
        });
    }

    fn skipped(&mut self, phase: &str, reason: String) {
        log::info!("skipping {phase}: {reason}");
        self.phases.push(PhaseRecord {
            phase: phase.to_string(),
            status: PhaseStatus::Skipped,
            reason: Some(reason),
            allotted_seconds: 0.0,
            seconds: 0.0,
        });
    }

    pub fn ran_phases(&self) -> Vec<String> {
        self.phases
            .iter()
            .filter(|p| p.status == PhaseStatus::Ran)
            .map(|p| p.phase.clone())
            .collect()
    }
}

/// Everything one preset fit needs at inference, plus its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRun {
    pub config: PresetConfig,
    pub cv: CvScheme,
    pub schema: Schema,
    pub typing: TypingReport,
    pub encoders: BTreeMap<String, EncoderSpec>,
    pub linear_pipeline: Option<FeaturePipeline>,
    pub tree_pipeline: Option<FeaturePipeline>,
    /// Tree-view columns the boosted models were trained on.
    pub selected_features: Option<Vec<String>>,
    pub level1: Vec<TrainedModel>,
    /// Models trained on level-1 OOF predictions; empty without stacking.
    pub level2: Vec<TrainedModel>,
    pub topology: StackTopology,
    /// Weights over the last level's models.
    pub blend: BlendWeights,
    pub diagnostics: RunDiagnostics,
    #[serde(skip)]
    pub oof: OofMatrix,
    pub oof_score: f64,
}

impl PresetRun {
    pub fn final_level(&self) -> &[TrainedModel] {
        if self.level2.is_empty() {
            &self.level1
        } else {
            &self.level2
        }
    }
}

/// Fits the preset within `config.budget_seconds`.
pub fn fit_preset(dataset: &Dataset, config: &PresetConfig) -> Result<AutoMLModel> {
    let budget = TimeBudget::from_secs_f64(config.budget_seconds);
    let run = fit_run(dataset, config, &budget)?;
    Ok(AutoMLModel::from_runs(dataset, vec![run], vec![vec![0]], vec![1.0]))
}

fn category_encoders(dataset: &Dataset, folds: &crate::validation::FoldAssignment, alpha: f64) -> Result<BTreeMap<String, EncoderSpec>> {
    let task = dataset.task();
    let mut out = BTreeMap::new();
    for col in dataset.columns() {
        if let ColumnData::Category { codes, .. } = &col.data {
            let spec = select_category_encoding(codes, dataset.target(), &task, folds, alpha)?;
            out.insert(col.name.clone(), spec);
        }
    }
    Ok(out)
}

struct SelectionOutcome {
    kept: Vec<String>,
    importances: Option<ImportanceVector>,
    forward: Option<ForwardSelection>,
}

fn select_tree_features(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &crate::validation::FoldAssignment,
    config: &PresetConfig,
    budget: &TimeBudget,
) -> Result<SelectionOutcome> {
    let expert = GbmFlavorSeed::params(task, x, GbmFlavor::LeafWise, config.seed);
    let train = folds.train_rows(0);
    let valid = folds.validation_rows(0);
    let (xt, xv) = (x.select_rows(&train), x.select_rows(&valid));
    let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
    let yv: Vec<f64> = valid.iter().map(|&r| y[r]).collect();
    match config.selection {
        SelectionStrategy::None => Ok(SelectionOutcome {
            kept: x.names.clone(),
            importances: None,
            forward: None,
        }),
        SelectionStrategy::Cutoff => {
            let start = Instant::now();
            let (est, _, _) = fit_gbm_fold(x, y, task, folds, 0, &expert, budget)?;
            let model = TrainedModel::single(
                expert.flavor.tag(),
                task,
                x.names.clone(),
                Estimator::Gbm(est),
                LearnerParams::Gbm(expert.clone()),
                start.elapsed().as_secs_f64(),
            );
            let imp = permutation_importance(&model, &xv, &yv, task.metric, config.seed)?;
            Ok(SelectionOutcome {
                kept: cutoff_select(&imp),
                importances: Some(imp),
                forward: None,
            })
        }
        SelectionStrategy::Forward => {
            let learner = GbmProcedure {
                task: *task,
                params: expert,
                budget: *budget,
            };
            let block = config.block_size.unwrap_or_else(|| default_block_size(x.n_features()));
            let fs = forward_select(&xt, &yt, &xv, &yv, &learner, block, task.metric, config.seed)?;
            Ok(SelectionOutcome {
                kept: fs.kept().to_vec(),
                importances: Some(fs.importances.clone()),
                forward: Some(fs),
            })
        }
    }
}

struct GbmFlavorSeed;

impl GbmFlavorSeed {
    /// Expert parameters with a seed that differs per flavor.
    fn params(task: &Task, x: &FeatureMatrix, flavor: GbmFlavor, seed: u64) -> crate::learners::GbmParams {
        let mut p = expert_params(task, x.n_rows, x.n_features(), flavor);
        p.seed = seed ^ match flavor {
            GbmFlavor::LeafWise => 0x1eaf,
            GbmFlavor::SymmetricDepthWise => 0x5e11,
        };
        p
    }
}

/// Blended OOF of weighted models: defined where every model is.
fn blended_oof(models: &[&TrainedModel], weights: &[f64], task: &Task) -> Result<OofMatrix> {
    let n = models[0].oof.values.nrows();
    let present: Vec<bool> = (0..n).map(|r| models.iter().all(|m| m.oof.present[r])).collect();
    let views: Vec<_> = models.iter().map(|m| m.oof.values.view()).collect();
    let mut values = apply_blend(&views, weights, task)?;
    for (r, p) in present.iter().enumerate() {
        if !p {
            values.row_mut(r).fill(f64::NAN);
        }
    }
    Ok(OofMatrix { values, present })
}

fn fit_run(dataset: &Dataset, config: &PresetConfig, budget: &TimeBudget) -> Result<PresetRun> {
    let start = Instant::now();
    let task = dataset.task();
    config.validate(&task)?;
    let y = dataset.target();
    let mut diag = RunDiagnostics::default();

    let cv = config.cv.clone().unwrap_or_else(|| CvScheme::default_for(task.kind, config.seed));
    let folds = make_folds(&cv, dataset)?;
    diag.fold_warnings = folds.warnings.clone();
    let typing = infer_feature_kind(dataset, &folds, &config.typing)?;
    let typed = dataset.with_categories(&typing.categories())?;
    let encoders = category_encoders(&typed, &folds, config.typing.alpha)?;

    let (linear_pipeline, linear_x) = if config.roster.linear {
        let (p, x) = FeaturePipeline::fit(&typed, &encoders, &folds, FeatureView::Linear)?;
        (Some(p), Some(x))
    } else {
        (None, None)
    };
    let (tree_pipeline, mut tree_x) = if config.roster.gbm_leaf || config.roster.gbm_sym {
        let (p, x) = FeaturePipeline::fit(&typed, &encoders, &folds, FeatureView::Tree)?;
        (Some(p), Some(x))
    } else {
        (None, None)
    };
    if tree_x.as_ref().is_some_and(|x| x.n_features() == 0) {
        diag.warnings.push("no usable features for boosting".into());
        tree_x = None;
    }

    let mut stack = config.stack_wanted(&task);
    if stack && !folds.covers_all_rows() {
        diag.warnings.push("stacking skipped: the validation scheme leaves rows without OOF predictions".into());
        stack = false;
    }
    let plan = PhasePlan::for_config(config, stack);
    let mut observed: BTreeMap<Phase, Duration> = BTreeMap::new();
    let mut level1: Vec<TrainedModel> = Vec::new();
    let mut level2: Vec<TrainedModel> = Vec::new();
    let mut expert_params_of: BTreeMap<Phase, crate::learners::GbmParams> = BTreeMap::new();
    let mut selected: Option<Vec<String>> = None;

    for idx in 0..plan.phases.len() {
        let phase = plan.phases[idx];
        if phase == Phase::Blend {
            break;
        }
        let allot = match allocate_time(budget.total(), budget.remaining(), &plan, idx, &observed) {
            Allocation::Run(d) => d,
            Allocation::Skip(reason) => {
                diag.skipped(phase.name(), reason);
                continue;
            }
        };
        let phase_start = Instant::now();
        match phase {
            Phase::Linear => {
                let x = linear_x.as_ref().expect("linear view fitted with the linear learner");
                let m = fit_linear(x, y, &task, &folds, &LinearParams::default(), &TimeBudget::new(allot), "linear")?;
                level1.push(m);
            }
            Phase::GbmLeafExpert | Phase::GbmSymExpert => {
                let Some(full_x) = tree_x.as_ref() else {
                    diag.skipped(phase.name(), "no usable features for boosting".into());
                    continue;
                };
                let phase_budget = budget.child(allot);
                if selected.is_none() {
                    let sel_start = Instant::now();
                    let sel_budget = phase_budget.child(allot / 2);
                    let outcome = select_tree_features(full_x, y, &task, &folds, config, &sel_budget)?;
                    let mut kept = outcome.kept;
                    if kept.is_empty() {
                        diag.warnings.push("feature selection kept nothing; using every feature".into());
                        kept = full_x.names.clone();
                    }
                    diag.importances = outcome.importances;
                    diag.forward = outcome.forward;
                    if config.selection != SelectionStrategy::None {
                        diag.ran("selection", allot / 2, sel_start.elapsed().as_secs_f64());
                    }
                    selected = Some(kept);
                }
                let x = full_x.select_columns(selected.as_ref().expect("set above"))?;
                let flavor = phase.flavor().expect("gbm phase");
                let params = GbmFlavorSeed::params(&task, &x, flavor, config.seed);
                let m = fit_gbm(&x, y, &task, &folds, &params, &phase_budget, flavor.tag())?;
                expert_params_of.insert(phase, params);
                level1.push(m);
            }
            Phase::GbmLeafTuned | Phase::GbmSymTuned => {
                let expert_phase = phase.expert().expect("tuned phase");
                let (Some(full_x), Some(expert)) = (tree_x.as_ref(), expert_params_of.get(&expert_phase)) else {
                    diag.skipped(phase.name(), format!("{} did not run", expert_phase.name()));
                    continue;
                };
                let x = full_x.select_columns(selected.as_ref().expect("expert phase selected features"))?;
                let spent = observed[&expert_phase];
                let tune_time = allot.saturating_sub(spent.mul_f64(REFIT_ALLOWANCE));
                if tune_time.is_zero() {
                    diag.skipped(phase.name(), "allotment does not cover tuning plus a refit".into());
                    continue;
                }
                let phase_budget = budget.child(allot);
                let result = tune_gbm(
                    &x,
                    y,
                    &task,
                    &folds,
                    expert,
                    &phase_budget.child(tune_time),
                    config.max_trials,
                    config.seed ^ expert.seed,
                )?;
                let tag = format!("{}_tuned", expert.flavor.tag());
                diag.trials.insert(tag.clone(), result.history.clone());
                if result.no_trials || result.best == *expert {
                    diag.skipped(phase.name(), "tuning kept the expert parameters".into());
                    continue;
                }
                let m = fit_gbm(&x, y, &task, &folds, &result.best, &phase_budget, &tag)?;
                level1.push(m);
            }
            Phase::Stack => {
                if level1.is_empty() {
                    diag.skipped(phase.name(), "no level-1 models".into());
                    continue;
                }
                let refs: Vec<&TrainedModel> = level1.iter().collect();
                let sx = build_stack_features(&refs, &task)?;
                let phase_budget = budget.child(allot);
                let lin = fit_linear(&sx, y, &task, &folds, &LinearParams::default(), &TimeBudget::new(allot.max(MIN_LINEAR_BUDGET)), "l2_linear")?;
                level2.push(lin);
                let params = GbmFlavorSeed::params(&task, &sx, GbmFlavor::LeafWise, config.seed ^ 0x2);
                level2.push(fit_gbm(&sx, y, &task, &folds, &params, &phase_budget, "l2_gbm_leaf")?);
            }
            Phase::Blend => unreachable!(),
        }
        let spent = phase_start.elapsed();
        observed.insert(phase, spent);
        diag.ran(phase.name(), allot, spent.as_secs_f64());
        log::info!("{} finished in {:.2}s", phase.name(), spent.as_secs_f64());
    }

    if level1.is_empty() {
        return Err(LamaError::BudgetExhausted("no model could be trained".into()));
    }
    let blend_start = Instant::now();
    let finals: Vec<&TrainedModel> = if level2.is_empty() { level1.iter().collect() } else { level2.iter().collect() };
    let oofs: Vec<&OofMatrix> = finals.iter().map(|m| &m.oof).collect();
    let mut blend = blend_weights(&oofs, y, &task)?;
    // models without weight leave the artifact
    let keep = blend.kept();
    blend.weights = keep.iter().map(|&i| blend.weights[i]).collect();
    blend.dropped.clear();
    let final_tags: Vec<String> = keep.iter().map(|&i| finals[i].learner_tag.clone()).collect();
    let dropped: Vec<String> = finals
        .iter()
        .map(|m| m.learner_tag.clone())
        .filter(|t| !final_tags.contains(t))
        .collect();
    if !dropped.is_empty() {
        diag.warnings.push(format!("dropped from the blend: {}", dropped.join(", ")));
    }
    if level2.is_empty() {
        level1.retain(|m| final_tags.contains(&m.learner_tag));
    } else {
        level2.retain(|m| final_tags.contains(&m.learner_tag));
    }
    let mut topology = vec![level1.iter().map(|m| m.learner_tag.clone()).collect::<Vec<_>>()];
    if !level2.is_empty() {
        topology.push(level2.iter().map(|m| m.learner_tag.clone()).collect());
    }
    let finals: Vec<&TrainedModel> = if level2.is_empty() { level1.iter().collect() } else { level2.iter().collect() };
    let oof = blended_oof(&finals, &blend.weights, &task)?;
    let oof_score = crate::learners::oof_score(&task, y, &oof);
    diag.ran("blend", Duration::ZERO, blend_start.elapsed().as_secs_f64());
    diag.total_seconds = start.elapsed().as_secs_f64();

    Ok(PresetRun {
        config: config.clone(),
        cv,
        schema: typed.schema().clone(),
        typing,
        encoders,
        linear_pipeline,
        tree_pipeline,
        selected_features: selected,
        level1,
        level2,
        topology: StackTopology::new(topology)?,
        blend,
        diagnostics: diag,
        oof,
        oof_score,
    })
}

/// Runs presets in priority order, and for each its seeds in order, while
/// the remaining budget still fits a run as long as the first one took.
/// Same-preset runs are averaged; presets are then blended.
pub fn utilized_fit(
    dataset: &Dataset,
    configs: &[PresetConfig],
    seeds: &[Vec<u64>],
    budget: &TimeBudget,
) -> Result<AutoMLModel> {
    if configs.is_empty() || configs.len() != seeds.len() || seeds.iter().any(|s| s.is_empty()) {
        return Err(LamaError::Config("one non-empty seed list per preset is required".into()));
    }
    let task = dataset.task();
    let n_runs: usize = seeds.iter().map(Vec::len).sum();
    let per_run = budget.total().div_f64(n_runs as f64);
    let mut runs: Vec<PresetRun> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut first_duration: Option<Duration> = None;
    'outer: for (config, config_seeds) in configs.iter().zip(seeds) {
        let mut group = Vec::new();
        for &seed in config_seeds {
            if let Some(d) = first_duration {
                if budget.remaining() < d {
                    if !group.is_empty() {
                        groups.push(std::mem::take(&mut group));
                    }
                    break 'outer;
                }
            }
            let run_budget = budget.child(per_run);
            let mut c = config.with_seed(seed);
            c.budget_seconds = run_budget.total().as_secs_f64().max(1e-3);
            let t = Instant::now();
            let run = fit_run(dataset, &c, &run_budget)?;
            first_duration.get_or_insert(t.elapsed());
            group.push(runs.len());
            runs.push(run);
        }
        groups.push(group);
    }
    if runs.len() == 1 {
        return Ok(AutoMLModel::from_runs(dataset, runs, groups, vec![1.0]));
    }
    let group_oofs: Vec<OofMatrix> = groups.iter().map(|g| mean_oof(g.iter().map(|&i| &runs[i].oof))).collect();
    let weights = if groups.len() == 1 {
        vec![1.0]
    } else {
        let refs: Vec<&OofMatrix> = group_oofs.iter().collect();
        blend_weights(&refs, dataset.target(), &task)?.weights
    };
    Ok(AutoMLModel::from_runs(dataset, runs, groups, weights))
}

/// Row-wise mean, defined where every input is.
pub(crate) fn mean_oof<'a>(oofs: impl Iterator<Item = &'a OofMatrix>) -> OofMatrix {
    let oofs: Vec<&OofMatrix> = oofs.collect();
    let (n, w) = oofs[0].values.dim();
    let present: Vec<bool> = (0..n).map(|r| oofs.iter().all(|o| o.present[r])).collect();
    let mut values = Array2::<f64>::zeros((n, w));
    for o in &oofs {
        values += &o.values;
    }
    values /= oofs.len() as f64;
    for (r, p) in present.iter().enumerate() {
        if !p {
            values.row_mut(r).fill(f64::NAN);
        }
    }
    OofMatrix { values, present }
}
