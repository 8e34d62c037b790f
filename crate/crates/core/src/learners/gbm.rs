//! Histogram gradient boosting with Newton leaf values.
//!
//! Features are binned per fold into at most 255 value bins plus a missing
//! bin. Two growth policies share the histogram and split search code:
//! best-first leaf expansion, and oblivious trees that apply one split per
//! level to every node that can take it.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{link_inplace, score_view, EarlyStopper, Estimator, FoldReport, LearnerKind, LearnerParams, TrainedModel};
use crate::error::{LamaError, Result};
use crate::features::FeatureMatrix;
use crate::task::{MetricSpec, Task, TaskKind, TimeBudget};
use crate::validation::{oof_assemble, FoldAssignment};

const MISSING_BIN: usize = 255;
const MIN_CHILD_HESSIAN: f64 = 1e-3;
/// Work (rows x features) above which histogram building fans out over features.
const PARALLEL_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbmFlavor {
    LeafWise,
    SymmetricDepthWise,
}

impl GbmFlavor {
    pub fn tag(self) -> &'static str {
        match self {
            GbmFlavor::LeafWise => "gbm_leaf",
            GbmFlavor::SymmetricDepthWise => "gbm_sym",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmParams {
    pub flavor: GbmFlavor,
    pub learning_rate: f64,
    /// Leaf cap for leaf-wise growth.
    pub max_leaves: usize,
    /// Depth of oblivious trees; for leaf-wise growth 0 means unlimited.
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub min_data_in_leaf: usize,
    pub l2_leaf_reg: f64,
    pub n_estimators_cap: usize,
    pub early_stopping_patience: usize,
    pub max_bins: usize,
    pub seed: u64,
}

impl GbmParams {
    pub fn new(flavor: GbmFlavor) -> Self {
        GbmParams {
            flavor,
            learning_rate: 0.1,
            max_leaves: 32,
            max_depth: match flavor {
                GbmFlavor::LeafWise => 0,
                GbmFlavor::SymmetricDepthWise => 6,
            },
            subsample: 1.0,
            colsample: 1.0,
            min_data_in_leaf: 2,
            l2_leaf_reg: 1.0,
            n_estimators_cap: 2000,
            early_stopping_patience: 100,
            max_bins: 255,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.learning_rate) {
            return Err(LamaError::Config(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !unit(self.subsample) || !unit(self.colsample) {
            return Err(LamaError::Config("subsample and colsample must be in (0, 1]".into()));
        }
        if self.n_estimators_cap == 0 || self.early_stopping_patience == 0 || self.min_data_in_leaf == 0 {
            return Err(LamaError::Config(
                "n_estimators_cap, early_stopping_patience and min_data_in_leaf must be >= 1".into(),
            ));
        }
        if !(2..=255).contains(&self.max_bins) {
            return Err(LamaError::Config(format!("max_bins must be in [2, 255], got {}", self.max_bins)));
        }
        if !(self.l2_leaf_reg >= 0.0) {
            return Err(LamaError::Config("l2_leaf_reg must be >= 0".into()));
        }
        match self.flavor {
            GbmFlavor::LeafWise if self.max_leaves < 2 => {
                Err(LamaError::Config("max_leaves must be >= 2".into()))
            }
            GbmFlavor::SymmetricDepthWise if self.max_depth < 1 => {
                Err(LamaError::Config("max_depth must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        /// Non-missing values `<= threshold` go left.
        threshold: f64,
        missing_left: bool,
        left: u32,
        right: u32,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let v = columns[*feature as usize][row];
                    let go_left = if v.is_nan() { *missing_left } else { v <= *threshold };
                    i = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    fn add_gains(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                acc[*feature as usize] += gain;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmEstimator {
    pub kind: TaskKind,
    pub n_features: usize,
    pub base_score: Vec<f64>,
    /// One entry per boosting iteration, holding one tree per output.
    pub trees: Vec<Vec<Tree>>,
}

impl GbmEstimator {
    pub fn n_iterations(&self) -> usize {
        self.trees.len()
    }

    pub fn raw_scores(&self, x: &FeatureMatrix) -> Array2<f64> {
        let width = self.base_score.len();
        let mut out = Array2::zeros((x.n_rows, width));
        for r in 0..x.n_rows {
            for c in 0..width {
                let mut s = self.base_score[c];
                for it in &self.trees {
                    s += it[c].predict_row(&x.columns, r);
                }
                out[[r, c]] = s;
            }
        }
        out
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let mut z = self.raw_scores(x);
        link_inplace(&task_of(self.kind, self.base_score.len()), &mut z);
        z
    }

    pub fn gain_by_feature(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features];
        for it in &self.trees {
            for t in it {
                t.add_gains(&mut acc);
            }
        }
        acc
    }
}

fn task_of(kind: TaskKind, width: usize) -> Task {
    Task {
        kind,
        n_classes: if kind == TaskKind::Multiclass { width } else { 0 },
        metric: MetricSpec::default_for(kind),
    }
}

/// Upper-inclusive bin thresholds for one feature: bin(v) = #{t < v}.
fn bin_thresholds(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let between = |a: f64, b: f64| {
        let m = a + (b - a) / 2.0;
        if m >= b {
            a
        } else {
            m
        }
    };
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| between(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..max_bins).map(|k| sorted[(k * n) / max_bins]).collect();
    cuts.dedup();
    cuts.into_iter()
        .filter_map(|c| {
            let i = distinct.partition_point(|d| *d <= c);
            distinct.get(i).map(|&next| between(c, next))
        })
        .collect()
}

fn bin_column(values: &[f64], thresholds: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                MISSING_BIN as u8
            } else {
                thresholds.partition_point(|t| *t < v) as u8
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: u32,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: Stats) -> Stats {
        Stats {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }

    fn score(self, l2: f64) -> f64 {
        self.g * self.g / (self.h + l2)
    }
}

type Histogram = Vec<Stats>;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    bin: usize,
    missing_left: bool,
    gain: f64,
}

/// Binned training data of one fold plus settings.
struct Grower<'a> {
    bins: &'a [Vec<u8>],
    thresholds: &'a [Vec<f64>],
    params: &'a GbmParams,
}

impl Grower<'_> {
    fn histogram(&self, feature: usize, rows: &[u32], g: &[f64], h: &[f64]) -> Histogram {
        let mut hist = vec![Stats::default(); 256];
        let col = &self.bins[feature];
        for &r in rows {
            let r = r as usize;
            hist[col[r] as usize].add(g[r], h[r]);
        }
        hist
    }

    fn histograms(&self, features: &[usize], rows: &[u32], g: &[f64], h: &[f64]) -> Vec<Histogram> {
        if rows.len() * features.len() >= PARALLEL_WORK {
            features
                .par_iter()
                .map(|&f| self.histogram(f, rows, g, h))
                .collect()
        } else {
            features.iter().map(|&f| self.histogram(f, rows, g, h)).collect()
        }
    }

    fn valid_child(&self, s: Stats) -> bool {
        s.n as usize >= self.params.min_data_in_leaf && s.h >= MIN_CHILD_HESSIAN
    }

    /// Gain of every split of one feature: index 2*bin for missing-right,
    /// 2*bin+1 for missing-left; invalid splits are None.
    fn split_gains(&self, feature: usize, hist: &Histogram, total: Stats) -> Vec<Option<f64>> {
        let nb = self.thresholds[feature].len() + 1;
        let l2 = self.params.l2_leaf_reg;
        let missing = hist[MISSING_BIN];
        let parent = total.score(l2);
        let mut out = vec![None; 2 * nb];
        let mut cum = Stats::default();
        for b in 0..nb {
            cum = cum.plus(hist[b]);
            for (slot, left) in [(2 * b, cum), (2 * b + 1, cum.plus(missing))] {
                if slot % 2 == 1 && missing.n == 0 {
                    continue;
                }
                let right = total.minus(left);
                if right.n == 0 || left.n == 0 || !self.valid_child(left) || !self.valid_child(right) {
                    continue;
                }
                out[slot] = Some(0.5 * (left.score(l2) + right.score(l2) - parent));
            }
        }
        out
    }

    fn best_split(&self, features: &[usize], hists: &[Histogram], total: Stats) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for (&f, hist) in features.iter().zip(hists) {
            for (slot, gain) in self.split_gains(f, hist, total).into_iter().enumerate() {
                if let Some(gain) = gain {
                    if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(Candidate {
                            feature: f,
                            bin: slot / 2,
                            missing_left: slot % 2 == 1,
                            gain,
                        });
                    }
                }
            }
        }
        best
    }

    fn goes_left(&self, c: &Candidate, row: u32) -> bool {
        let b = self.bins[c.feature][row as usize] as usize;
        if b == MISSING_BIN {
            c.missing_left
        } else {
            b <= c.bin
        }
    }

    fn split_node(&self, c: &Candidate, left: u32, right: u32) -> Node {
        let t = &self.thresholds[c.feature];
        Node::Split {
            feature: c.feature as u32,
            threshold: if c.bin < t.len() { t[c.bin] } else { f64::MAX },
            missing_left: c.missing_left,
            left,
            right,
            gain: c.gain,
        }
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        -self.params.learning_rate * s.g / (s.h + self.params.l2_leaf_reg)
    }

    fn partition(&self, c: &Candidate, rows: &[u32]) -> (Vec<u32>, Vec<u32>) {
        rows.iter().partition(|&&r| self.goes_left(c, r))
    }

    fn grow(&self, features: &[usize], rows: Vec<u32>, g: &[f64], h: &[f64]) -> Tree {
        match self.params.flavor {
            GbmFlavor::LeafWise => self.grow_leaf_wise(features, rows, g, h),
            GbmFlavor::SymmetricDepthWise => self.grow_symmetric(features, rows, g, h),
        }
    }

    fn grow_leaf_wise(&self, features: &[usize], rows: Vec<u32>, g: &[f64], h: &[f64]) -> Tree {
        struct Open {
            node: usize,
            rows: Vec<u32>,
            stats: Stats,
            depth: usize,
            best: Option<Candidate>,
        }
        let stats_of = |rows: &[u32]| {
            let mut s = Stats::default();
            for &r in rows {
                s.add(g[r as usize], h[r as usize]);
            }
            s
        };
        let depth_ok = |d: usize| self.params.max_depth == 0 || d < self.params.max_depth;
        let evaluate = |rows: &[u32], stats: Stats, depth: usize| {
            if !depth_ok(depth) || rows.len() < 2 * self.params.min_data_in_leaf {
                return None;
            }
            let hists = self.histograms(features, rows, g, h);
            self.best_split(features, &hists, stats)
        };
        let root_stats = stats_of(&rows);
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut open = vec![Open {
            node: 0,
            best: evaluate(&rows, root_stats, 0),
            rows,
            stats: root_stats,
            depth: 0,
        }];
        let mut n_leaves = 1;
        while n_leaves < self.params.max_leaves {
            let mut pick: Option<usize> = None;
            for (i, o) in open.iter().enumerate() {
                if let Some(c) = &o.best {
                    if pick.is_none_or(|p| c.gain > open[p].best.as_ref().unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(i) = pick else { break };
            let leaf = open.remove(i);
            let c = leaf.best.unwrap();
            let (lr, rr) = self.partition(&c, &leaf.rows);
            let (ls, rs) = (stats_of(&lr), stats_of(&rr));
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[leaf.node] = self.split_node(&c, li as u32, ri as u32);
            let d = leaf.depth + 1;
            // keep creation order stable: left child before right
            open.insert(
                i,
                Open {
                    node: ri,
                    best: evaluate(&rr, rs, d),
                    rows: rr,
                    stats: rs,
                    depth: d,
                },
            );
            open.insert(
                i,
                Open {
                    node: li,
                    best: evaluate(&lr, ls, d),
                    rows: lr,
                    stats: ls,
                    depth: d,
                },
            );
            n_leaves += 1;
        }
        for o in &open {
            nodes[o.node] = Node::Leaf {
                value: self.leaf_value(o.stats),
            };
        }
        Tree { nodes }
    }

    fn grow_symmetric(&self, features: &[usize], rows: Vec<u32>, g: &[f64], h: &[f64]) -> Tree {
        struct Level {
            node: usize,
            rows: Vec<u32>,
            stats: Stats,
            frozen: bool,
        }
        let stats_of = |rows: &[u32]| {
            let mut s = Stats::default();
            for &r in rows {
                s.add(g[r as usize], h[r as usize]);
            }
            s
        };
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let root_stats = stats_of(&rows);
        let mut level = vec![Level {
            node: 0,
            rows,
            stats: root_stats,
            frozen: false,
        }];
        for _ in 0..self.params.max_depth {
            let active: Vec<usize> = (0..level.len()).filter(|&i| !level[i].frozen).collect();
            if active.is_empty() {
                break;
            }
            // per active node, gains of every candidate of every feature
            let per_node: Vec<Vec<Vec<Option<f64>>>> = active
                .iter()
                .map(|&i| {
                    let l = &level[i];
                    let hists = self.histograms(features, &l.rows, g, h);
                    features
                        .iter()
                        .zip(&hists)
                        .map(|(&f, hist)| self.split_gains(f, hist, l.stats))
                        .collect()
                })
                .collect();
            let mut best: Option<Candidate> = None;
            for (fi, &f) in features.iter().enumerate() {
                let slots = per_node[0][fi].len();
                for slot in 0..slots {
                    let total: f64 = per_node
                        .iter()
                        .map(|node| node[fi][slot].filter(|v| *v > 0.0).unwrap_or(0.0))
                        .sum();
                    if total > 1e-12 && best.is_none_or(|b| total > b.gain) {
                        best = Some(Candidate {
                            feature: f,
                            bin: slot / 2,
                            missing_left: slot % 2 == 1,
                            gain: total,
                        });
                    }
                }
            }
            let Some(c) = best else { break };
            let fi = features.iter().position(|&f| f == c.feature).unwrap();
            let slot = 2 * c.bin + usize::from(c.missing_left);
            let mut next = Vec::with_capacity(level.len() * 2);
            let mut active_pos = 0;
            for l in level.into_iter() {
                if l.frozen {
                    next.push(l);
                    continue;
                }
                let node_gain = per_node[active_pos][fi][slot].filter(|v| *v > 0.0);
                active_pos += 1;
                match node_gain {
                    Some(gain) => {
                        let (lr, rr) = self.partition(&c, &l.rows);
                        let (li, ri) = (nodes.len(), nodes.len() + 1);
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes[l.node] = self.split_node(&Candidate { gain, ..c }, li as u32, ri as u32);
                        next.push(Level {
                            node: li,
                            stats: stats_of(&lr),
                            rows: lr,
                            frozen: false,
                        });
                        next.push(Level {
                            node: ri,
                            stats: stats_of(&rr),
                            rows: rr,
                            frozen: false,
                        });
                    }
                    None => next.push(Level { frozen: true, ..l }),
                }
            }
            level = next;
        }
        for l in &level {
            nodes[l.node] = Node::Leaf {
                value: self.leaf_value(l.stats),
            };
        }
        Tree { nodes }
    }
}

/// Everything recorded while boosting one estimator.
#[derive(Debug, Clone, Default)]
pub struct BoostTrace {
    /// Mean training loss after each kept-or-not iteration (base score first).
    pub train_loss: Vec<f64>,
    /// Validation metric after each iteration, when validation rows exist.
    pub valid_scores: Vec<f64>,
    pub best_iteration: usize,
    pub truncated: bool,
}

fn base_scores(task: &Task, y: &[f64]) -> Vec<f64> {
    let n = y.len().max(1) as f64;
    match task.kind {
        TaskKind::Regression => {
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if lo == hi {
                vec![lo]
            } else {
                vec![y.iter().sum::<f64>() / n]
            }
        }
        TaskKind::Binary => {
            let p = (y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
            vec![(p / (1.0 - p)).ln()]
        }
        TaskKind::Multiclass => (0..task.n_classes)
            .map(|k| {
                let c = y.iter().filter(|&&v| v as usize == k).count() as f64;
                (c / n).clamp(1e-6, 1.0).ln()
            })
            .collect(),
    }
}

/// Fills gradients and hessians (output-major) and returns the mean loss.
fn gradients(task: &Task, y: &[f64], scores: &[Vec<f64>], g: &mut [Vec<f64>], h: &mut [Vec<f64>]) -> f64 {
    let n = y.len();
    let mut loss = 0.0;
    match task.kind {
        TaskKind::Regression => {
            for r in 0..n {
                let d = scores[0][r] - y[r];
                loss += 0.5 * d * d;
                g[0][r] = d;
                h[0][r] = 1.0;
            }
        }
        TaskKind::Binary => {
            for r in 0..n {
                let z = scores[0][r];
                let p = super::sigmoid(z);
                loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y[r] * z;
                g[0][r] = p - y[r];
                h[0][r] = (p * (1.0 - p)).max(1e-16);
            }
        }
        TaskKind::Multiclass => {
            let k = task.n_classes;
            for r in 0..n {
                let m = (0..k).map(|c| scores[c][r]).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..k).map(|c| (scores[c][r] - m).exp()).sum();
                let lse = m + s.ln();
                let yc = y[r] as usize;
                loss += lse - scores[yc][r];
                for c in 0..k {
                    let p = (scores[c][r] - lse).exp();
                    g[c][r] = p - if c == yc { 1.0 } else { 0.0 };
                    h[c][r] = (p * (1.0 - p)).max(1e-16);
                }
            }
        }
    }
    loss / n.max(1) as f64
}

fn output_matrix(scores: &[Vec<f64>], task: &Task) -> Array2<f64> {
    let n = scores.first().map_or(0, Vec::len);
    let mut m = Array2::zeros((n, scores.len()));
    for (c, col) in scores.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            m[[r, c]] = *v;
        }
    }
    link_inplace(task, &mut m);
    m
}

/// Boosts one estimator on `train`; `valid` (features, target) drives early
/// stopping. Without validation rows the run goes to the iteration cap.
pub fn boost(
    train: &FeatureMatrix,
    y: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
    task: &Task,
    params: &GbmParams,
    budget: &TimeBudget,
) -> Result<(GbmEstimator, BoostTrace)> {
    params.validate()?;
    let m = train.n_features();
    if m == 0 {
        return Err(LamaError::InvalidInput("gradient boosting needs at least one feature".into()));
    }
    if train.n_rows != y.len() {
        return Err(LamaError::LengthMismatch {
            expected: y.len(),
            found: train.n_rows,
        });
    }
    let n = y.len();
    let thresholds: Vec<Vec<f64>> = train
        .columns
        .iter()
        .map(|c| bin_thresholds(c, params.max_bins))
        .collect();
    let bins: Vec<Vec<u8>> = train
        .columns
        .iter()
        .zip(&thresholds)
        .map(|(c, t)| bin_column(c, t))
        .collect();
    let grower = Grower {
        bins: &bins,
        thresholds: &thresholds,
        params,
    };
    let width = task.output_width();
    let base = base_scores(task, y);
    let mut scores: Vec<Vec<f64>> = base.iter().map(|&b| vec![b; n]).collect();
    let mut valid_scores: Option<Vec<Vec<f64>>> =
        valid.map(|(vx, _)| base.iter().map(|&b| vec![b; vx.n_rows]).collect());
    let mut g = vec![vec![0.0; n]; width];
    let mut h = vec![vec![0.0; n]; width];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_cols = ((params.colsample * m as f64).round() as usize).clamp(1, m);
    let mut trees: Vec<Vec<Tree>> = Vec::new();
    let mut trace = BoostTrace::default();
    let mut stopper = EarlyStopper::new(params.early_stopping_patience);

    for it in 0..params.n_estimators_cap {
        let loss = gradients(task, y, &scores, &mut g, &mut h);
        if it == 0 {
            trace.train_loss.push(loss);
        }
        if it > 0 && budget.is_exhausted() {
            trace.truncated = true;
            break;
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            let picked: Vec<u32> = (0..n as u32)
                .filter(|_| rng.random::<f64>() < params.subsample)
                .collect();
            if picked.is_empty() {
                (0..n as u32).collect()
            } else {
                picked
            }
        } else {
            (0..n as u32).collect()
        };
        let mut round = Vec::with_capacity(width);
        for c in 0..width {
            let mut features: Vec<usize> = if n_cols < m {
                sample(&mut rng, m, n_cols).into_vec()
            } else {
                (0..m).collect()
            };
            features.sort_unstable();
            let tree = if g[c].iter().all(|v| *v == 0.0) {
                Tree::leaf(0.0)
            } else {
                grower.grow(&features, rows.clone(), &g[c], &h[c])
            };
            for (r, s) in scores[c].iter_mut().enumerate() {
                *s += tree.predict_row(&train.columns, r);
            }
            if let (Some(vs), Some((vx, _))) = (valid_scores.as_mut(), valid) {
                for (r, s) in vs[c].iter_mut().enumerate() {
                    *s += tree.predict_row(&vx.columns, r);
                }
            }
            round.push(tree);
        }
        trees.push(round);
        trace
            .train_loss
            .push(gradients(task, y, &scores, &mut g, &mut h));
        if let (Some(vs), Some((_, vy))) = (valid_scores.as_ref(), valid) {
            let score = score_view(task, vy, output_matrix(vs, task).view());
            trace.valid_scores.push(score);
            if stopper.push(score) {
                break;
            }
        }
    }
    trace.best_iteration = if valid.is_some() && !trace.valid_scores.is_empty() {
        stopper.best_index()
    } else {
        trees.len().saturating_sub(1)
    };
    trees.truncate(trace.best_iteration + 1);
    Ok((
        GbmEstimator {
            kind: task.kind,
            n_features: m,
            base_score: base,
            trees,
        },
        trace,
    ))
}

/// Fits fold `fold` and returns the estimator, its validation predictions
/// and a report.
pub fn fit_gbm_fold(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    fold: usize,
    params: &GbmParams,
    budget: &TimeBudget,
) -> Result<(GbmEstimator, Array2<f64>, FoldReport)> {
    let train = folds.train_rows(fold);
    let valid = folds.validation_rows(fold);
    let xt = x.select_rows(&train);
    let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
    let xv = x.select_rows(&valid);
    let yv: Vec<f64> = valid.iter().map(|&r| y[r]).collect();
    let fold_params = GbmParams {
        seed: params.seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ..params.clone()
    };
    let validation = if valid.is_empty() { None } else { Some((&xv, yv.as_slice())) };
    let (est, trace) = boost(&xt, &yt, validation, task, &fold_params, budget)?;
    let pred = est.predict(&xv);
    let score = if valid.is_empty() {
        f64::NAN
    } else {
        score_view(task, &yv, pred.view())
    };
    let report = FoldReport {
        fold,
        validation_score: score,
        best_iteration: trace.best_iteration,
        lambda: None,
        truncated: trace.truncated,
    };
    Ok((est, pred, report))
}

/// Cross-validated gradient boosting; folds train concurrently.
pub fn fit_gbm(
    x: &FeatureMatrix,
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    params: &GbmParams,
    budget: &TimeBudget,
    tag: &str,
) -> Result<TrainedModel> {
    params.validate()?;
    if x.n_features() == 0 {
        return Err(LamaError::InvalidInput(format!("model {tag:?} has zero usable features")));
    }
    if x.n_rows != y.len() || folds.n_rows() != y.len() {
        return Err(LamaError::LengthMismatch {
            expected: y.len(),
            found: if x.n_rows != y.len() { x.n_rows } else { folds.n_rows() },
        });
    }
    let start = Instant::now();
    let fits: Vec<(GbmEstimator, Array2<f64>, FoldReport)> = (0..folds.k)
        .into_par_iter()
        .map(|f| fit_gbm_fold(x, y, task, folds, f, params, budget))
        .collect::<Result<_>>()?;
    let preds: Vec<Array2<f64>> = fits.iter().map(|f| f.1.clone()).collect();
    let oof = oof_assemble(&preds, folds)?;
    let metric_oof = super::oof_score(task, y, &oof);
    Ok(TrainedModel {
        learner_tag: tag.to_string(),
        kind: LearnerKind::Gbm,
        task: *task,
        feature_names: x.names.clone(),
        truncated: fits.iter().any(|f| f.2.truncated),
        folds: fits.iter().map(|f| f.2.clone()).collect(),
        estimators: fits.into_iter().map(|f| Estimator::Gbm(f.0)).collect(),
        params: LearnerParams::Gbm(params.clone()),
        oof,
        metric_oof,
        training_seconds: start.elapsed().as_secs_f64(),
    })
}
