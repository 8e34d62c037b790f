//! Convex blending by coordinate descent, and level-2 stacking features.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::features::FeatureMatrix;
use crate::learners::TrainedModel;
use crate::task::{Task, TaskKind};
use crate::validation::OofMatrix;

pub const GRID_POINTS: usize = 33;
pub const MAX_SWEEPS: usize = 10;
pub const SWEEP_TOLERANCE: f64 = 1e-7;
pub const PRUNE_BELOW: f64 = 0.01;
/// Moves must beat the current score by more than float noise.
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub weights: Vec<f64>,
    /// Models whose weight ended at zero.
    pub dropped: Vec<usize>,
    /// Blended metric on the common OOF rows.
    pub score: f64,
    /// Score after initialization and after every accepted move.
    pub trace: Vec<f64>,
}

impl BlendWeights {
    pub fn single() -> Self {
        BlendWeights {
            weights: vec![1.0],
            dropped: Vec::new(),
            score: f64::NAN,
            trace: Vec::new(),
        }
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }
}

/// Weighted average of output-space predictions; multiclass rows are
/// renormalized. A one-hot weight vector returns that model's output as is.
pub fn apply_blend(predictions: &[ArrayView2<'_, f64>], weights: &[f64], task: &Task) -> Result<Array2<f64>> {
    if predictions.is_empty() || predictions.len() != weights.len() {
        return Err(LamaError::InvalidInput(format!(
            "{} predictions for {} weights",
            predictions.len(),
            weights.len()
        )));
    }
    let shape = predictions[0].dim();
    if predictions.iter().any(|p| p.dim() != shape) {
        return Err(LamaError::InvalidInput("prediction shapes differ".into()));
    }
    if let Some(i) = weights.iter().position(|&w| w == 1.0) {
        if weights.iter().enumerate().all(|(j, &w)| j == i || w == 0.0) {
            return Ok(predictions[i].to_owned());
        }
    }
    let mut out = Array2::zeros(shape);
    for (p, &w) in predictions.iter().zip(weights) {
        if w != 0.0 {
            out.scaled_add(w, p);
        }
    }
    if task.kind == TaskKind::Multiclass {
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
    }
    Ok(out)
}

struct Scorer<'a> {
    preds: Vec<Array2<f64>>,
    y: Vec<f64>,
    task: &'a Task,
}

impl Scorer<'_> {
    fn score(&self, w: &[f64]) -> f64 {
        let views: Vec<ArrayView2<'_, f64>> = self.preds.iter().map(|p| p.view()).collect();
        let blended = apply_blend(&views, w, self.task).expect("shapes checked up front");
        self.task.metric.score(&self.y, blended.view())
    }
}

/// `w` with coordinate `i` set to `t` and the others rescaled to sum `1 - t`.
fn move_coordinate(w: &[f64], i: usize, t: f64) -> Option<Vec<f64>> {
    let rest = 1.0 - w[i];
    if rest <= 0.0 {
        return if t == 1.0 { Some(w.to_vec()) } else { None };
    }
    let scale = (1.0 - t) / rest;
    Some(
        w.iter()
            .enumerate()
            .map(|(j, &v)| if j == i { t } else { v * scale })
            .collect(),
    )
}

/// Coordinate-descent blend weights maximizing the task metric over the
/// rows where every OOF matrix is defined. Starts at the best single model
/// and only accepts strict improvements, so the result never scores below
/// that model.
pub fn blend_weights(oofs: &[&OofMatrix], y: &[f64], task: &Task) -> Result<BlendWeights> {
    if oofs.is_empty() {
        return Err(LamaError::InvalidInput("blending needs at least one model".into()));
    }
    let n = y.len();
    if oofs.iter().any(|o| o.values.nrows() != n) {
        return Err(LamaError::InvalidInput("OOF rows are not aligned with the target".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|&r| oofs.iter().all(|o| o.present[r])).collect();
    if rows.is_empty() {
        return Err(LamaError::InvalidInput("no row has predictions from every model".into()));
    }
    let scorer = Scorer {
        preds: oofs.iter().map(|o| o.values.select(ndarray::Axis(0), &rows)).collect(),
        y: rows.iter().map(|&r| y[r]).collect(),
        task,
    };
    let m = oofs.len();
    let singles: Vec<f64> = (0..m)
        .map(|i| {
            let mut w = vec![0.0; m];
            w[i] = 1.0;
            scorer.score(&w)
        })
        .collect();
    let best = (0..m).fold(0, |b, i| if singles[i] > singles[b] { i } else { b });
    let mut w = vec![0.0; m];
    w[best] = 1.0;
    let mut cur = singles[best];
    let mut trace = vec![cur];
    if m == 1 {
        return Ok(BlendWeights {
            weights: w,
            dropped: Vec::new(),
            score: cur,
            trace,
        });
    }

    let step = 1.0 / (GRID_POINTS - 1) as f64;
    for _ in 0..MAX_SWEEPS {
        let sweep_start = cur;
        for i in 0..m {
            let mut cand: Option<(f64, Vec<f64>, f64)> = None;
            for g in 0..GRID_POINTS {
                let t = g as f64 * step;
                if let Some(wt) = move_coordinate(&w, i, t) {
                    let s = scorer.score(&wt);
                    if cand.as_ref().is_none_or(|c| s > c.0) {
                        cand = Some((s, wt, t));
                    }
                }
            }
            let Some((mut s_best, mut w_best, t_grid)) = cand else { continue };
            // golden-section refinement around the best grid point
            let (mut a, mut b) = ((t_grid - step).max(0.0), (t_grid + step).min(1.0));
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let eval = |t: f64| move_coordinate(&w, i, t).map(|wt| (scorer.score(&wt), wt));
            for _ in 0..40 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                match (eval(c), eval(d)) {
                    (Some((sc, wc)), Some((sd, wd))) => {
                        if sc >= sd {
                            b = d;
                            if sc > s_best {
                                s_best = sc;
                                w_best = wc;
                            }
                        } else {
                            a = c;
                            if sd > s_best {
                                s_best = sd;
                                w_best = wd;
                            }
                        }
                    }
                    _ => break,
                }
            }
            if s_best > cur + IMPROVEMENT_EPS {
                w = w_best;
                cur = s_best;
                trace.push(cur);
            }
        }
        if cur - sweep_start < SWEEP_TOLERANCE {
            break;
        }
    }

    // prune small weights one at a time, smallest first, keeping a removal
    // only if the score does not drop
    let mut small: Vec<usize> = (0..m).filter(|&i| w[i] > 0.0 && w[i] < PRUNE_BELOW).collect();
    small.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    for j in small {
        let mut wp = w.clone();
        wp[j] = 0.0;
        let s: f64 = wp.iter().sum();
        if s <= 0.0 {
            continue;
        }
        wp.iter_mut().for_each(|v| *v /= s);
        let sp = scorer.score(&wp);
        if sp >= cur {
            w = wp;
            cur = sp;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let dropped = (0..m).filter(|&i| w[i] == 0.0).collect();
    Ok(BlendWeights {
        score: scorer.score(&w),
        weights: w,
        dropped,
        trace,
    })
}

/// Deepest stack built; further levels add cost without gains.
pub const MAX_STACK_DEPTH: usize = 3;

/// Learner tags per level, bottom first. Each level above the first is
/// trained on the OOF predictions of the level below only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackTopology {
    pub levels: Vec<Vec<String>>,
}

impl StackTopology {
    pub fn new(levels: Vec<Vec<String>>) -> Result<Self> {
        if levels.is_empty() || levels.len() > MAX_STACK_DEPTH {
            return Err(LamaError::Config(format!(
                "stack depth must be between 1 and {MAX_STACK_DEPTH}, got {}",
                levels.len()
            )));
        }
        Ok(StackTopology { levels })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Name of stacking column `k` of a level-1 model.
pub fn stack_column(tag: &str, k: usize) -> String {
    format!("{tag}__c{k}")
}

/// Per-model output columns of a level-1 model in the stacked table.
fn stack_width(task: &Task) -> usize {
    task.output_width()
}

/// Stacked columns carry level-1 outputs in link space (logit for binary,
/// log-probability for multiclass), so a linear level-2 model can reproduce
/// any single input model.
fn stack_value(task: &Task, p: f64) -> f64 {
    const FLOOR: f64 = 1e-15;
    match task.kind {
        TaskKind::Binary => {
            let q = p.clamp(FLOOR, 1.0 - FLOOR);
            (q / (1.0 - q)).ln()
        }
        TaskKind::Multiclass => p.max(FLOOR).ln(),
        TaskKind::Regression => p,
    }
}

/// Level-2 training table: the level-1 OOF predictions side by side.
pub fn build_stack_features(level1: &[&TrainedModel], task: &Task) -> Result<FeatureMatrix> {
    let Some(first) = level1.first() else {
        return Err(LamaError::InvalidInput("stacking needs at least one level-1 model".into()));
    };
    let n = first.oof.values.nrows();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for m in level1 {
        if m.oof.values.nrows() != n || m.oof.present.iter().any(|p| !p) {
            return Err(LamaError::InvalidInput(format!(
                "OOF predictions of {:?} do not cover every row",
                m.learner_tag
            )));
        }
        for k in 0..stack_width(task) {
            names.push(stack_column(&m.learner_tag, k));
            columns.push(m.oof.values.column(k).iter().map(|&p| stack_value(task, p)).collect());
        }
    }
    let mut fm = FeatureMatrix::new(names, columns)?;
    fm.n_rows = n;
    Ok(fm)
}

/// Level-2 inference table from level-1 predictions on new rows.
pub fn stack_features_from(tags: &[String], predictions: &[Array2<f64>], task: &Task) -> Result<FeatureMatrix> {
    if tags.len() != predictions.len() {
        return Err(LamaError::InvalidInput("one prediction matrix per level-1 model expected".into()));
    }
    let n = predictions.first().map_or(0, |p| p.nrows());
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for (tag, p) in tags.iter().zip(predictions) {
        if p.nrows() != n {
            return Err(LamaError::InvalidInput("level-1 predictions differ in row count".into()));
        }
        for k in 0..stack_width(task) {
            names.push(stack_column(tag, k));
            columns.push(p.column(k).iter().map(|&v| stack_value(task, v)).collect());
        }
    }
    let mut fm = FeatureMatrix::new(names, columns)?;
    fm.n_rows = n;
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::MetricSpec;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(values: Array2<f64>) -> OofMatrix {
        let n = values.nrows();
        OofMatrix {
            values,
            present: vec![true; n],
        }
    }

    #[test]
    fn single_model_gets_full_weight() {
        let o = full(array![[0.2], [0.8]]);
        let w = blend_weights(&[&o], &[0.0, 1.0], &Task::binary()).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn perfect_model_wins() {
        let y = [0.0, 1.0, 0.0, 1.0];
        let a = full(array![[0.1], [0.9], [0.2], [0.8]]);
        let b = full(array![[0.6], [0.4], [0.5], [0.5]]);
        let w = blend_weights(&[&a, &b], &y, &Task::binary()).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
        assert_eq!(w.dropped, vec![1]);
    }

    #[test]
    fn identical_models_stay_at_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(0..2) as f64).collect();
        let p = Array2::from_shape_fn((50, 1), |_| rng.random::<f64>());
        let (a, b) = (full(p.clone()), full(p));
        for metric in [MetricSpec::RocAuc, MetricSpec::NegLogloss] {
            let task = Task::binary().with_metric(metric).unwrap();
            let w = blend_weights(&[&a, &b], &y, &task).unwrap();
            assert_eq!(w.weights, vec![1.0, 0.0]);
        }
    }

    fn brute_force(preds: &[&OofMatrix], y: &[f64], task: &Task) -> f64 {
        let views: Vec<_> = preds.iter().map(|o| o.values.view()).collect();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let w = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                let s = task.metric.score(y, apply_blend(&views, &w, task).unwrap().view());
                best = best.max(s);
            }
        }
        best
    }

    #[test]
    fn matches_simplex_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let n = 200;
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let models: Vec<OofMatrix> = (0..3)
                .map(|k| {
                    let noise = 0.5 + 0.3 * k as f64;
                    full(Array2::from_shape_fn((n, 1), |(r, _)| {
                        let z = (2.0 * y[r] - 1.0) + noise * rng.random_range(-2.0..2.0);
                        1.0 / (1.0 + (-z).exp())
                    }))
                })
                .collect();
            let refs: Vec<&OofMatrix> = models.iter().collect();
            let task = Task::binary().with_metric(MetricSpec::NegLogloss).unwrap();
            let w = blend_weights(&refs, &y, &task).unwrap();
            let oracle = brute_force(&refs, &y, &task);
            assert!(w.score >= oracle - 1e-6, "{} vs {oracle}", w.score);
            let single_best = (0..3).map(|i| task.metric.score(&y, models[i].values.view())).fold(f64::NEG_INFINITY, f64::max);
            assert!(w.score >= single_best);
            assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.weights.iter().all(|&v| v == 0.0 || v >= PRUNE_BELOW));
            assert!(w.trace.windows(2).all(|t| t[1] > t[0]));
        }
    }

    #[test]
    fn apply_blend_examples() {
        let a = array![[0.2], [0.3]];
        let b = array![[0.6], [0.9]];
        let t = Task::binary();
        assert_eq!(apply_blend(&[a.view(), b.view()], &[1.0, 0.0], &t).unwrap(), a);
        let mid = apply_blend(&[a.view(), b.view()], &[0.5, 0.5], &t).unwrap();
        assert!((mid[[0, 0]] - 0.4).abs() < 1e-12);
        let m1 = array![[0.2, 0.3, 0.5]];
        let m2 = array![[0.6, 0.3, 0.1]];
        let p = apply_blend(&[m1.view(), m2.view()], &[0.3, 0.7], &Task::multiclass(3)).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        assert!(apply_blend(&[a.view(), m1.view()], &[0.5, 0.5], &t).is_err());
    }

    fn stub(tag: &str, task: &Task, oof: Array2<f64>) -> TrainedModel {
        let mut m = TrainedModel::single(
            tag,
            task,
            vec!["x".into()],
            crate::learners::Estimator::Linear(crate::learners::LinearEstimator::constant(task, 1, &vec![0.5; task.output_width()])),
            crate::learners::LearnerParams::Linear(Default::default()),
            0.0,
        );
        m.oof = full(oof);
        m
    }

    #[test]
    fn stack_shapes_and_names() {
        let t = Task::binary();
        let ms: Vec<TrainedModel> = (0..3).map(|i| stub(&format!("m{i}"), &t, Array2::zeros((7, 1)))).collect();
        let refs: Vec<&TrainedModel> = ms.iter().collect();
        let f = build_stack_features(&refs, &t).unwrap();
        assert_eq!((f.n_rows, f.n_features()), (7, 3));
        assert_eq!(f.names[2], "m2__c0");
        let t4 = Task::multiclass(4);
        let ms: Vec<TrainedModel> = (0..2).map(|i| stub(&format!("m{i}"), &t4, Array2::zeros((5, 4)))).collect();
        let refs: Vec<&TrainedModel> = ms.iter().collect();
        let f = build_stack_features(&refs, &t4).unwrap();
        assert_eq!((f.n_rows, f.n_features()), (5, 8));
        let mut gap = stub("g", &t, Array2::zeros((7, 1)));
        gap.oof.present[3] = false;
        assert!(build_stack_features(&[&gap], &t).is_err());
    }
}
