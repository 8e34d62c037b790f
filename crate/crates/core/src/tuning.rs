//! Hyperparameters for boosting: a fixed expert table keyed by data size,
//! and a Tree-structured Parzen Estimator that refines it within a budget.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::learners::gbm::fit_gbm_fold;
use crate::learners::{GbmFlavor, GbmParams};
use crate::task::{Task, TimeBudget};
use crate::validation::FoldAssignment;

/// Upper row bounds of the first two size tiers.
const TIER_ROWS: [usize; 2] = [20_000, 200_000];

/// Expert boosting parameters. The table currently depends only on the row
/// count and the flavor; task and width are accepted so callers need not
/// change if it grows.
pub fn expert_params(task: &Task, n_rows: usize, n_features: usize, flavor: GbmFlavor) -> GbmParams {
    let _ = (task, n_features);
    let tier = TIER_ROWS.iter().filter(|&&t| n_rows >= t).count();
    let mut p = GbmParams::new(flavor);
    p.learning_rate = [0.1, 0.05, 0.025][tier];
    p.max_leaves = [32, 64, 128][tier];
    p.max_depth = match flavor {
        GbmFlavor::LeafWise => 0,
        GbmFlavor::SymmetricDepthWise => [5, 6, 7][tier],
    };
    p.subsample = 0.9;
    p.colsample = 0.9;
    p.min_data_in_leaf = (n_rows / 10_000).max(2);
    p.l2_leaf_reg = 1.0;
    p.n_estimators_cap = 2000;
    p.early_stopping_patience = 100;
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
    IntLogUniform { lo: i64, hi: i64 },
}

impl Domain {
    fn is_log(self) -> bool {
        matches!(self, Domain::LogUniform { .. } | Domain::IntLogUniform { .. })
    }

    fn is_int(self) -> bool {
        matches!(self, Domain::IntUniform { .. } | Domain::IntLogUniform { .. })
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            Domain::Uniform { lo, hi } | Domain::LogUniform { lo, hi } => (lo, hi),
            Domain::IntUniform { lo, hi } | Domain::IntLogUniform { lo, hi } => (lo as f64, hi as f64),
        }
    }

    /// Bounds in the space the densities live in (log for log domains).
    fn internal_bounds(self) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        if self.is_log() {
            (lo.ln(), hi.ln())
        } else {
            (lo, hi)
        }
    }

    fn to_internal(self, v: f64) -> f64 {
        if self.is_log() {
            v.ln()
        } else {
            v
        }
    }

    /// Maps an internal coordinate back to a legal value, rounding integers.
    fn from_internal(self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let v = if self.is_log() { u.exp() } else { u };
        let v = if self.is_int() { v.round() } else { v };
        v.clamp(lo, hi)
    }

    pub fn contains(self, v: f64) -> bool {
        let (lo, hi) = self.bounds();
        v >= lo && v <= hi && (!self.is_int() || v.fract() == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub flavor: GbmFlavor,
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn for_flavor(flavor: GbmFlavor) -> Self {
        let dim = |name: &str, domain| Dimension {
            name: name.to_string(),
            domain,
        };
        let size = match flavor {
            GbmFlavor::LeafWise => dim("max_leaves", Domain::IntUniform { lo: 16, hi: 255 }),
            GbmFlavor::SymmetricDepthWise => dim("max_depth", Domain::IntUniform { lo: 3, hi: 8 }),
        };
        SearchSpace {
            flavor,
            dims: vec![
                dim("learning_rate", Domain::LogUniform { lo: 0.01, hi: 0.25 }),
                size,
                dim("subsample", Domain::Uniform { lo: 0.5, hi: 1.0 }),
                dim("colsample", Domain::Uniform { lo: 0.5, hi: 1.0 }),
                dim("min_data_in_leaf", Domain::IntLogUniform { lo: 1, hi: 256 }),
                dim("l2_leaf_reg", Domain::LogUniform { lo: 1e-3, hi: 10.0 }),
            ],
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims.len() && self.dims.iter().zip(point).all(|(d, v)| d.domain.contains(*v))
    }

    /// The searched coordinates of `params` (not clamped to the space).
    pub fn point_of(&self, params: &GbmParams) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| match d.name.as_str() {
                "learning_rate" => params.learning_rate,
                "max_leaves" => params.max_leaves as f64,
                "max_depth" => params.max_depth as f64,
                "subsample" => params.subsample,
                "colsample" => params.colsample,
                "min_data_in_leaf" => params.min_data_in_leaf as f64,
                "l2_leaf_reg" => params.l2_leaf_reg,
                other => unreachable!("unknown dimension {other}"),
            })
            .collect()
    }

    /// `base` with the searched coordinates replaced by `point`.
    pub fn apply(&self, base: &GbmParams, point: &[f64]) -> GbmParams {
        let mut p = base.clone();
        for (d, &v) in self.dims.iter().zip(point) {
            match d.name.as_str() {
                "learning_rate" => p.learning_rate = v,
                "max_leaves" => p.max_leaves = v as usize,
                "max_depth" => p.max_depth = v as usize,
                "subsample" => p.subsample = v,
                "colsample" => p.colsample = v,
                "min_data_in_leaf" => p.min_data_in_leaf = v as usize,
                "l2_leaf_reg" => p.l2_leaf_reg = v,
                other => unreachable!("unknown dimension {other}"),
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub point: Vec<f64>,
    pub params: GbmParams,
    pub score: f64,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
    pub seed: u64,
}

impl TrialHistory {
    pub fn new(seed: u64) -> Self {
        TrialHistory {
            trials: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Index of the best trial; ties keep the earliest.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, t) in self.trials.iter().enumerate() {
            if best.is_none_or(|b| t.score > self.trials[b].score) {
                best = Some(i);
            }
        }
        best
    }
}

pub const TPE_GAMMA: f64 = 0.15;
pub const TPE_STARTUP: usize = 10;
pub const TPE_CANDIDATES: usize = 24;
pub const MAX_TRIALS: usize = 64;

/// One-dimensional Gaussian mixture with a shared bandwidth.
struct Kde {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    fn fit(centers: Vec<f64>, lo: f64, hi: f64) -> Kde {
        let n = centers.len() as f64;
        let mean = centers.iter().sum::<f64>() / n;
        let var = centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        let scott = 1.06 * var.sqrt() * n.powf(-0.2);
        Kde {
            centers,
            bandwidth: scott.max(0.01 * (hi - lo)),
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        let s = self.bandwidth;
        let terms: Vec<f64> = self
            .centers
            .iter()
            .map(|c| -0.5 * ((x - c) / s).powi(2))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
        m + (sum / self.centers.len() as f64).ln() - s.ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let c = self.centers[rng.random_range(0..self.centers.len())];
        for _ in 0..32 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = c + self.bandwidth * z;
            if x >= lo && x <= hi {
                return x;
            }
        }
        c.clamp(lo, hi)
    }
}

/// Proposes the next point. The result is a function of the history, its
/// seed and the space only.
pub fn tpe_suggest(history: &TrialHistory, space: &SearchSpace) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(history.seed ^ (history.len() as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    if history.len() < TPE_STARTUP {
        return space
            .dims
            .iter()
            .map(|d| {
                let (lo, hi) = d.domain.internal_bounds();
                d.domain.from_internal(rng.random_range(lo..=hi))
            })
            .collect();
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history.trials[b].score.total_cmp(&history.trials[a].score).then(a.cmp(&b)));
    let n_good = ((TPE_GAMMA * history.len() as f64).ceil() as usize).clamp(1, history.len() - 1);
    let (good, bad) = order.split_at(n_good);
    let kdes: Vec<(Kde, Kde)> = space
        .dims
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let (lo, hi) = d.domain.internal_bounds();
            let coords = |rows: &[usize]| -> Vec<f64> {
                rows.iter()
                    .map(|&i| d.domain.to_internal(history.trials[i].point[j]).clamp(lo, hi))
                    .collect()
            };
            (Kde::fit(coords(good), lo, hi), Kde::fit(coords(bad), lo, hi))
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..TPE_CANDIDATES {
        let mut point = Vec::with_capacity(space.dims.len());
        let mut ratio = 0.0;
        for (d, (l, g)) in space.dims.iter().zip(&kdes) {
            let (lo, hi) = d.domain.internal_bounds();
            let v = d.domain.from_internal(l.sample(&mut rng, lo, hi));
            let u = d.domain.to_internal(v);
            ratio += l.log_density(u) - g.log_density(u);
            point.push(v);
        }
        if best.as_ref().is_none_or(|b| ratio > b.0) {
            best = Some((ratio, point));
        }
    }
    best.expect("at least one candidate").1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best: GbmParams,
    pub best_score: Option<f64>,
    pub history: TrialHistory,
    /// The budget did not allow a single trial.
    pub no_trials: bool,
}

/// TPE search on a single split (fold 0 validates). Trial 0 evaluates
/// `expert`, so the best score is never below the expert's.
#[allow(clippy::too_many_arguments)]
pub fn tune_gbm(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    expert: &GbmParams,
    budget: &TimeBudget,
    max_trials: usize,
    seed: u64,
) -> Result<TuningResult> {
    let space = SearchSpace::for_flavor(expert.flavor);
    let mut history = TrialHistory::new(seed);
    if budget.is_exhausted() || max_trials == 0 {
        return Ok(TuningResult {
            best: expert.clone(),
            best_score: None,
            history,
            no_trials: true,
        });
    }
    let cap = max_trials.min(MAX_TRIALS);
    while history.len() < cap && !budget.is_exhausted() {
        let (point, params) = if history.is_empty() {
            (space.point_of(expert), expert.clone())
        } else {
            let p = tpe_suggest(&history, &space);
            let params = space.apply(expert, &p);
            (p, params)
        };
        let start = Instant::now();
        let (_, _, report) = fit_gbm_fold(x, y, task, folds, 0, &params, budget)?;
        let score = if report.validation_score.is_finite() {
            report.validation_score
        } else {
            f64::NEG_INFINITY
        };
        history.trials.push(Trial {
            point,
            params,
            score,
            duration_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let b = history.best_index().expect("one trial ran");
    Ok(TuningResult {
        best: history.trials[b].params.clone(),
        best_score: Some(history.trials[b].score),
        history,
        no_trials: false,
    })
}
