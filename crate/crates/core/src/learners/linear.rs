//! L2-penalized generalized linear model (logistic, softmax or ridge) fit
//! with L-BFGS along a warm-started penalty path.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{link_inplace, score_view, FoldReport, LearnerKind, LearnerParams, TrainedModel};
use crate::error::{LamaError, Result};
use crate::features::FeatureMatrix;
use crate::task::{MetricSpec, Task, TaskKind, TimeBudget};
use crate::validation::{oof_assemble, FoldAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    /// Penalties tried per fold, strongest first.
    pub lambda_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Stop when the largest gradient component falls below this.
    pub tolerance: f64,
    /// Consecutive validation worsenings that end the path walk.
    pub patience: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            lambda_grid: log_grid(1e3, 1e-5, 20),
            max_iterations: 300,
            tolerance: 1e-6,
            patience: 2,
        }
    }
}

/// `n` log-spaced points from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

impl LinearParams {
    pub fn with_lambda(lambda: f64) -> Self {
        LinearParams {
            lambda_grid: vec![lambda],
            ..LinearParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(LamaError::Config("lambda grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(LamaError::Config("lambda values must be finite and >= 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LamaError::Config("lambda grid must be strictly decreasing".into()));
        }
        if self.max_iterations == 0 || self.patience == 0 {
            return Err(LamaError::Config("max_iterations and patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimator {
    pub kind: TaskKind,
    /// One row of weights per output.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
}

impl LinearEstimator {
    /// Ignores the features and predicts `outputs` (output space).
    pub fn constant(task: &Task, n_features: usize, outputs: &[f64]) -> Self {
        let intercepts = match task.kind {
            TaskKind::Binary => outputs.iter().map(|p| (p / (1.0 - p)).ln()).collect(),
            TaskKind::Multiclass => outputs.iter().map(|p| p.ln()).collect(),
            TaskKind::Regression => outputs.to_vec(),
        };
        LinearEstimator {
            kind: task.kind,
            weights: vec![vec![0.0; n_features]; outputs.len()],
            intercepts,
            lambda: 0.0,
        }
    }

    fn from_theta(task: &Task, m: usize, theta: &[f64], lambda: f64) -> Self {
        let k = task.output_width();
        LinearEstimator {
            kind: task.kind,
            weights: (0..k).map(|c| theta[c * (m + 1)..c * (m + 1) + m].to_vec()).collect(),
            intercepts: (0..k).map(|c| theta[c * (m + 1) + m]).collect(),
            lambda,
        }
    }

    pub fn coef_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn raw_scores(&self, x: &FeatureMatrix) -> Array2<f64> {
        let k = self.intercepts.len();
        let mut z = Array2::zeros((x.n_rows, k));
        for c in 0..k {
            let mut col = vec![self.intercepts[c]; x.n_rows];
            for (w, xj) in self.weights[c].iter().zip(&x.columns) {
                if *w != 0.0 {
                    for (zr, v) in col.iter_mut().zip(xj) {
                        *zr += w * v;
                    }
                }
            }
            for (r, v) in col.into_iter().enumerate() {
                z[[r, c]] = v;
            }
        }
        z
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let mut z = self.raw_scores(x);
        let task = Task {
            kind: self.kind,
            n_classes: self.intercepts.len(),
            metric: crate::task::MetricSpec::default_for(self.kind),
        };
        link_inplace(&task, &mut z);
        z
    }
}

/// Penalized mean loss and its gradient over a fixed design.
struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    kind: TaskKind,
    width: usize,
    lambda: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.width * (self.x.len() + 1)
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.x.len();
        let n = self.y.len();
        let inv_n = 1.0 / n.max(1) as f64;
        let mut z = vec![vec![0.0; n]; self.width];
        for (c, zc) in z.iter_mut().enumerate() {
            let base = c * (m + 1);
            zc.iter_mut().for_each(|v| *v = theta[base + m]);
            for j in 0..m {
                let w = theta[base + j];
                if w != 0.0 {
                    for (zr, xv) in zc.iter_mut().zip(&self.x[j]) {
                        *zr += w * xv;
                    }
                }
            }
        }
        // residuals d = dLoss/dz, reused in place of z
        let mut loss = 0.0;
        match self.kind {
            TaskKind::Binary => {
                for (zr, &yr) in z[0].iter_mut().zip(self.y) {
                    loss += softplus(*zr) - yr * *zr;
                    *zr = super::sigmoid(*zr) - yr;
                }
            }
            TaskKind::Regression => {
                for (zr, &yr) in z[0].iter_mut().zip(self.y) {
                    let d = *zr - yr;
                    loss += 0.5 * d * d;
                    *zr = d;
                }
            }
            TaskKind::Multiclass => {
                for r in 0..n {
                    let mx = (0..self.width).map(|c| z[c][r]).fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = (0..self.width).map(|c| (z[c][r] - mx).exp()).sum();
                    let lse = mx + s.ln();
                    let yc = self.y[r] as usize;
                    loss += lse - z[yc][r];
                    for (c, zc) in z.iter_mut().enumerate() {
                        let p = (zc[r] - lse).exp();
                        zc[r] = p - if c == yc { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        loss *= inv_n;
        let mut penalty = 0.0;
        for (c, dc) in z.iter().enumerate() {
            let base = c * (m + 1);
            for j in 0..m {
                let w = theta[base + j];
                let g: f64 = dc.iter().zip(&self.x[j]).map(|(d, xv)| d * xv).sum();
                grad[base + j] = g * inv_n + self.lambda * w;
                penalty += w * w;
            }
            grad[base + m] = dc.iter().sum::<f64>() * inv_n;
        }
        loss + 0.5 * self.lambda * penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. Returns the solution and
/// the objective value after every accepted step (starting point first).
fn lbfgs(obj: &Objective<'_>, x0: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, Vec<f64>) {
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g);
    let mut trace = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for _ in 0..max_iter {
        if g.iter().fold(0.0f64, |a, v| a.max(v.abs())) < tol {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if s_hist.is_empty() {
            (1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = obj.eval(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || f_new > fx {
            break;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let decrease = fx - f_new;
        fx = f_new;
        trace.push(fx);
        if decrease <= 1e-16 * fx.abs().max(1.0) {
            break;
        }
    }
    (x, trace)
}

/// Solves one penalized problem from `init` (zeros when `None`).
/// Returns the estimator and the objective trace.
pub fn fit_linear_single(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    lambda: f64,
    init: Option<&LinearEstimator>,
    params: &LinearParams,
) -> (LinearEstimator, Vec<f64>) {
    let obj = Objective {
        x: &x.columns,
        y,
        kind: task.kind,
        width: task.output_width(),
        lambda,
    };
    let m = x.n_features();
    let theta0 = match init {
        Some(e) => {
            let mut t = Vec::with_capacity(obj.dim());
            for (w, b) in e.weights.iter().zip(&e.intercepts) {
                t.extend_from_slice(w);
                t.push(*b);
            }
            t
        }
        None => vec![0.0; obj.dim()],
    };
    let (theta, trace) = lbfgs(&obj, &theta0, params.max_iterations, params.tolerance);
    (LinearEstimator::from_theta(task, m, &theta, lambda), trace)
}

struct FoldFit {
    estimator: LinearEstimator,
    valid_pred: Array2<f64>,
    report: FoldReport,
}

fn fit_fold(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    fold: usize,
    params: &LinearParams,
    budget: &TimeBudget,
) -> FoldFit {
    let train = folds.train_rows(fold);
    let valid = folds.validation_rows(fold);
    let xt = x.select_rows(&train);
    let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
    let xv = x.select_rows(&valid);
    let yv: Vec<f64> = valid.iter().map(|&r| y[r]).collect();

    // Penalties are compared on validation loss. A ranking metric saturates on
    // separable folds and would keep the heaviest penalty, whose near-constant
    // predictions do not pool across folds.
    let loss = match task.kind {
        TaskKind::Regression => MetricSpec::NegRmse,
        _ => MetricSpec::NegLogloss,
    };
    let mut current: Option<LinearEstimator> = None;
    let mut best: Option<(f64, usize, LinearEstimator, Array2<f64>)> = None;
    let mut prev = f64::NEG_INFINITY;
    let mut worse = 0;
    let mut truncated = false;
    for (gi, &lambda) in params.lambda_grid.iter().enumerate() {
        if gi > 0 && budget.is_exhausted() {
            truncated = true;
            break;
        }
        let (est, _) = fit_linear_single(&xt, &yt, task, lambda, current.as_ref(), params);
        let pred = est.predict(&xv);
        let score = loss.score(&yv, pred.view());
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, gi, est.clone(), pred));
        }
        if gi > 0 && score < prev {
            worse += 1;
        } else {
            worse = 0;
        }
        prev = score;
        current = Some(est);
        if worse >= params.patience {
            break;
        }
    }
    let (_, gi, estimator, valid_pred) = best.expect("at least one penalty is always fit");
    FoldFit {
        report: FoldReport {
            fold,
            validation_score: score_view(task, &yv, valid_pred.view()),
            best_iteration: gi,
            lambda: Some(estimator.lambda),
            truncated,
        },
        estimator,
        valid_pred,
    }
}

/// Cross-validated linear model. Each fold walks the penalty grid and keeps
/// its lowest-loss solution; the first penalty of every fold always runs.
pub fn fit_linear(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    params: &LinearParams,
    budget: &TimeBudget,
    tag: &str,
) -> Result<TrainedModel> {
    params.validate()?;
    if budget.is_exhausted() {
        return Err(LamaError::BudgetExhausted(format!(
            "no time left to fit linear model {tag:?}"
        )));
    }
    if x.n_rows != y.len() || folds.n_rows() != y.len() {
        return Err(LamaError::LengthMismatch {
            expected: y.len(),
            found: if x.n_rows != y.len() { x.n_rows } else { folds.n_rows() },
        });
    }
    let start = Instant::now();
    let fits: Vec<FoldFit> = (0..folds.k)
        .into_par_iter()
        .map(|f| fit_fold(x, y, task, folds, f, params, budget))
        .collect();
    let preds: Vec<Array2<f64>> = fits.iter().map(|f| f.valid_pred.clone()).collect();
    let oof = oof_assemble(&preds, folds)?;
    let metric_oof = super::oof_score(task, y, &oof);
    Ok(TrainedModel {
        learner_tag: tag.to_string(),
        kind: LearnerKind::Linear,
        task: *task,
        feature_names: x.names.clone(),
        truncated: fits.iter().any(|f| f.report.truncated),
        folds: fits.iter().map(|f| f.report.clone()).collect(),
        estimators: fits
            .into_iter()
            .map(|f| super::Estimator::Linear(f.estimator))
            .collect(),
        params: LearnerParams::Linear(params.clone()),
        oof,
        metric_oof,
        training_seconds: start.elapsed().as_secs_f64(),
    })
}
