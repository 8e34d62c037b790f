//! Numeric-vs-category decisions for integer and float columns, driven by
//! how well several encodings sort the target (Normalized Gini).

pub mod encoders;
pub mod gini;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use encoders::{
    encoding_targets, freq_encode, oof_mean_encode, oof_target_encode, quantile_discretize,
    quantile_edges, FrequencyEncoder, TargetEncoder,
};
pub use gini::{encoded_gini, norm_gini, norm_gini_for_task, norm_gini_multiclass, norm_gini_pairwise};

use crate::data::{numeric_to_codes, ColumnData, Dataset, NumericOrigin};
use crate::error::Result;
use crate::task::Task;
use crate::validation::FoldAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypingConfig {
    /// Smoothing of the out-of-fold target encoder.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Quantile bin count.
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_alpha() -> f64 {
    2.0
}

fn default_bins() -> usize {
    10
}

impl Default for TypingConfig {
    fn default() -> Self {
        TypingConfig {
            alpha: default_alpha(),
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniScores {
    /// Raw values.
    pub no_enc: f64,
    /// Out-of-fold target encoding of quantile bins.
    pub oof_q: f64,
    /// Frequency encoding.
    pub freq: f64,
    /// Out-of-fold target encoding of the values.
    pub oof: f64,
}

impl GiniScores {
    fn best_encoded(&self) -> f64 {
        self.oof.max(self.freq).max(self.oof_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Numeric,
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTyping {
    pub name: String,
    pub ngs: GiniScores,
    pub unique_count: usize,
    pub unique_ratio: f64,
    pub missing_rate: f64,
    /// Effective quantile bin count on the non-missing values.
    pub quantile_bins: usize,
    pub verdict: Verdict,
    /// Rule that decided the verdict, "R1".."R9", or "R10" for the category fallback.
    pub fired_rule: String,
}

impl FeatureTyping {
    pub fn is_number(&self) -> bool {
        self.verdict == Verdict::Numeric
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TypingReport {
    pub features: Vec<FeatureTyping>,
}

impl TypingReport {
    pub fn categories(&self) -> Vec<String> {
        self.features
            .iter()
            .filter(|f| f.verdict == Verdict::Category)
            .map(|f| f.name.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureTyping> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// Statistics the rules look at.
#[derive(Debug, Clone, Copy)]
pub struct RuleInputs {
    pub ngs: GiniScores,
    pub unique_count: usize,
    pub unique_ratio: f64,
    pub n_rows: usize,
    pub missing_rate: f64,
    pub fractional_float: bool,
    pub quantile_bins: usize,
}

/// Ordered rule list; the first rule that fires makes the column numeric.
pub fn apply_rules(s: &RuleInputs) -> (Verdict, &'static str) {
    let g = &s.ngs;
    let best = g.best_encoded();
    let rules: [(&'static str, bool); 9] = [
        ("R1", s.unique_count <= 2),
        ("R2", s.unique_ratio > 0.95),
        ("R3", g.no_enc >= best - 0.01),
        ("R4", best < 0.05),
        // only meaningful when binning actually merges values
        (
            "R5",
            s.quantile_bins < s.unique_count && g.oof_q >= g.oof - 0.005 && g.oof_q >= g.freq,
        ),
        (
            "R6",
            s.unique_count as f64 > 0.5 * s.n_rows as f64 && g.freq < g.no_enc,
        ),
        ("R7", s.fractional_float),
        ("R8", g.oof - g.no_enc < 0.02 && s.unique_count > 100),
        ("R9", s.missing_rate > 0.95),
    ];
    for (name, fired) in rules {
        if fired {
            return (Verdict::Numeric, name);
        }
    }
    (Verdict::Category, "R10")
}

/// Types one numeric column. `values` may contain NaN (missing).
pub fn type_numeric_column(
    name: &str,
    values: &[f64],
    fractional_float: bool,
    y: &[f64],
    task: &Task,
    fold_of_row: &[i32],
    config: &TypingConfig,
) -> Result<FeatureTyping> {
    let n_all = values.len();
    let keep: Vec<usize> = (0..n_all).filter(|&r| !values[r].is_nan()).collect();
    let missing_rate = if n_all == 0 {
        0.0
    } else {
        1.0 - keep.len() as f64 / n_all as f64
    };
    let x: Vec<f64> = keep.iter().map(|&r| values[r]).collect();
    let y_nn: Vec<f64> = keep.iter().map(|&r| y[r]).collect();
    let groups: Vec<i32> = keep.iter().map(|&r| fold_of_row[r]).collect();
    let (codes, distinct) = numeric_to_codes(&x);
    let unique_count = distinct.len();
    let unique_ratio = if x.is_empty() {
        0.0
    } else {
        unique_count as f64 / x.len() as f64
    };

    if missing_rate > 0.99 || x.len() < 2 {
        return Ok(FeatureTyping {
            name: name.to_string(),
            ngs: GiniScores {
                no_enc: 0.0,
                oof_q: 0.0,
                freq: 0.0,
                oof: 0.0,
            },
            unique_count,
            unique_ratio,
            missing_rate,
            quantile_bins: unique_count.min(config.bins),
            verdict: Verdict::Numeric,
            fired_rule: "R9".to_string(),
        });
    }

    let targets = encoding_targets(task, &y_nn);
    let oof_of = |codes: &[i32]| -> Result<Vec<Vec<f64>>> {
        targets
            .iter()
            .map(|t| oof_mean_encode(codes, t, &groups, config.alpha))
            .collect()
    };
    let no_enc = norm_gini_for_task(task, &y_nn, &x)?;
    let bins = quantile_discretize(&x, config.bins)?;
    let quantile_bins = bins.iter().copied().max().map_or(0, |m| m as usize + 1);
    let oof_q = encoded_gini(task, &y_nn, &oof_of(&bins)?)?;
    let freq = norm_gini_for_task(task, &y_nn, &freq_encode(&codes).1)?;
    let oof = encoded_gini(task, &y_nn, &oof_of(&codes)?)?;
    let ngs = GiniScores {
        no_enc,
        oof_q,
        freq,
        oof,
    };
    let (verdict, rule) = apply_rules(&RuleInputs {
        ngs,
        unique_count,
        unique_ratio,
        n_rows: x.len(),
        missing_rate,
        fractional_float,
        quantile_bins,
    });
    Ok(FeatureTyping {
        name: name.to_string(),
        ngs,
        unique_count,
        unique_ratio,
        missing_rate,
        quantile_bins,
        verdict,
        fired_rule: rule.to_string(),
    })
}

/// Runs the typing rules over every parsed integer/float column. Columns
/// from datetime expansion or user hints are left alone.
pub fn infer_feature_kind(
    dataset: &Dataset,
    folds: &FoldAssignment,
    config: &TypingConfig,
) -> Result<TypingReport> {
    let task = dataset.task();
    let candidates: Vec<(&str, &[f64], bool)> = dataset
        .columns()
        .iter()
        .filter_map(|c| match &c.data {
            ColumnData::Numeric {
                values,
                origin: NumericOrigin::Integer,
            } => Some((c.name.as_str(), values.as_slice(), false)),
            ColumnData::Numeric {
                values,
                origin: NumericOrigin::Float { fractional },
            } => Some((c.name.as_str(), values.as_slice(), *fractional)),
            _ => None,
        })
        .collect();
    let features = candidates
        .par_iter()
        .map(|(name, values, fractional)| {
            type_numeric_column(
                name,
                values,
                *fractional,
                dataset.target(),
                &task,
                &folds.fold_of_row,
                config,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TypingReport { features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Raw,
    Frequency,
    OofTarget,
    QuantileBins,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Smoothing for target encoding.
    pub alpha: f64,
    /// Bin count for quantile bins.
    pub bins: usize,
    /// Largest cardinality one-hot may be used for.
    pub one_hot_cap: usize,
    /// Cardinality is within the one-hot cap for the linear pipeline.
    pub one_hot_eligible: bool,
    pub ng_freq: f64,
    pub ng_oof: f64,
}

/// One-hot eligibility cap recorded by [`select_category_encoding`].
pub const ONE_HOT_ELIGIBLE_CAP: usize = 10;

/// Chooses between frequency and out-of-fold target encoding for a category
/// column by comparing their Ginis; ties go to target encoding.
pub fn select_category_encoding(
    codes: &[i32],
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    alpha: f64,
) -> Result<EncoderSpec> {
    let keep: Vec<usize> = (0..codes.len()).filter(|&r| codes[r] >= 0).collect();
    let c: Vec<i32> = keep.iter().map(|&r| codes[r]).collect();
    let y_nn: Vec<f64> = keep.iter().map(|&r| y[r]).collect();
    let groups: Vec<i32> = keep.iter().map(|&r| folds.fold_of_row[r]).collect();
    let cardinality = c.iter().collect::<std::collections::BTreeSet<_>>().len();
    let (ng_freq, ng_oof) = if c.len() < 2 {
        (0.0, 0.0)
    } else {
        let freq = norm_gini_for_task(task, &y_nn, &freq_encode(&c).1)?;
        let enc: Vec<Vec<f64>> = encoding_targets(task, &y_nn)
            .iter()
            .map(|t| oof_mean_encode(&c, t, &groups, alpha))
            .collect::<Result<_>>()?;
        (freq, encoded_gini(task, &y_nn, &enc)?)
    };
    let kind = if ng_freq > ng_oof {
        EncoderKind::Frequency
    } else {
        EncoderKind::OofTarget
    };
    Ok(EncoderSpec {
        kind,
        alpha,
        bins: default_bins(),
        one_hot_cap: ONE_HOT_ELIGIBLE_CAP,
        one_hot_eligible: cardinality <= ONE_HOT_ELIGIBLE_CAP,
        ng_freq,
        ng_oof,
    })
}
