//! Model-facing feature views built from a typed dataset.
//!
//! Two views exist: the tree view keeps numbers raw (NaN for missing) and
//! encodes categories by frequency or out-of-fold target means; the linear
//! view imputes, adds missing indicators, one-hot or target encodes
//! categories, and standardizes every output column.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autotyping::{encoding_targets, EncoderKind, EncoderSpec, FrequencyEncoder, TargetEncoder};
use crate::data::{ColumnData, Dataset, Frame};
use crate::error::{LamaError, Result};
use crate::task::Task;
use crate::validation::FoldAssignment;

/// Column-major numeric table; NaN marks missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(LamaError::LengthMismatch {
                expected: names.len(),
                found: columns.len(),
            });
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n_rows) {
            return Err(LamaError::LengthMismatch {
                expected: n_rows,
                found: bad.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(LamaError::DuplicateColumn(n.clone()));
            }
        }
        Ok(FeatureMatrix {
            names,
            columns,
            n_rows,
        })
    }

    /// Builds a matrix from row-major data.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); m];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(LamaError::RaggedRow {
                    row: i,
                    expected: m,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                columns[j].push(*v);
            }
        }
        let mut fm = FeatureMatrix::new(names, columns)?;
        fm.n_rows = rows.len();
        Ok(fm)
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.columns[i].as_slice())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// Columns in the order of `names`; every name must exist.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            let i = self.index_of(n).ok_or_else(|| {
                LamaError::ColumnMismatch(format!("feature {n:?} is not in the table"))
            })?;
            columns.push(self.columns[i].clone());
        }
        Ok(FeatureMatrix {
            names: names.to_vec(),
            columns,
            n_rows: self.n_rows,
        })
    }

    /// Appends the columns of `other`, which must have the same row count.
    pub fn hstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if other.n_rows != self.n_rows && other.n_features() > 0 && self.n_features() > 0 {
            return Err(LamaError::LengthMismatch {
                expected: self.n_rows,
                found: other.n_rows,
            });
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        let mut fm = FeatureMatrix::new(names, columns)?;
        fm.n_rows = self.n_rows.max(other.n_rows);
        Ok(fm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    Tree,
    Linear,
}

/// Maximum cardinality one-hot encoded in the linear view.
pub const LINEAR_ONE_HOT_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    Raw {
        source: String,
    },
    Imputed {
        source: String,
        median: f64,
        indicator: bool,
    },
    Frequency {
        source: String,
        encoder: FrequencyEncoder,
    },
    Target {
        source: String,
        encoder: TargetEncoder,
    },
    OneHot {
        source: String,
        levels: usize,
    },
}

impl ColumnTransform {
    pub fn source(&self) -> &str {
        match self {
            ColumnTransform::Raw { source }
            | ColumnTransform::Imputed { source, .. }
            | ColumnTransform::Frequency { source, .. }
            | ColumnTransform::Target { source, .. }
            | ColumnTransform::OneHot { source, .. } => source,
        }
    }

    fn output_names(&self) -> Vec<String> {
        match self {
            ColumnTransform::Raw { source } => vec![source.clone()],
            ColumnTransform::Imputed {
                source, indicator, ..
            } => {
                let mut v = vec![source.clone()];
                if *indicator {
                    v.push(format!("{source}__missing"));
                }
                v
            }
            ColumnTransform::Frequency { source, .. } => vec![format!("{source}__freq")],
            ColumnTransform::Target { source, encoder } => {
                if encoder.n_outputs() == 1 {
                    vec![format!("{source}__te")]
                } else {
                    (0..encoder.n_outputs())
                        .map(|k| format!("{source}__te{k}"))
                        .collect()
                }
            }
            ColumnTransform::OneHot { source, levels } => {
                (0..*levels).map(|k| format!("{source}__oh{k}")).collect()
            }
        }
    }

    fn apply(&self, frame: &Frame) -> Result<Vec<Vec<f64>>> {
        let col = frame.column(self.source()).ok_or_else(|| {
            LamaError::ColumnMismatch(format!("input column {:?} is missing", self.source()))
        })?;
        let wrong_kind = || {
            LamaError::ColumnMismatch(format!(
                "input column {:?} does not have the role it was trained with",
                self.source()
            ))
        };
        match (self, &col.data) {
            (ColumnTransform::Raw { .. }, ColumnData::Numeric { values, .. }) => Ok(vec![values.clone()]),
            (
                ColumnTransform::Imputed {
                    median, indicator, ..
                },
                ColumnData::Numeric { values, .. },
            ) => {
                let filled = values
                    .iter()
                    .map(|v| if v.is_nan() { *median } else { *v })
                    .collect();
                let mut out = vec![filled];
                if *indicator {
                    out.push(
                        values
                            .iter()
                            .map(|v| if v.is_nan() { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
                Ok(out)
            }
            (ColumnTransform::Frequency { encoder, .. }, ColumnData::Category { codes, .. }) => {
                Ok(vec![encoder.transform(codes)])
            }
            (ColumnTransform::Target { encoder, .. }, ColumnData::Category { codes, .. }) => {
                Ok(encoder.transform(codes))
            }
            (ColumnTransform::OneHot { levels, .. }, ColumnData::Category { codes, .. }) => {
                let mut out = vec![vec![0.0; codes.len()]; *levels];
                for (r, &c) in codes.iter().enumerate() {
                    if c >= 0 && (c as usize) < *levels {
                        out[c as usize][r] = 1.0;
                    }
                }
                Ok(out)
            }
            _ => Err(wrong_kind()),
        }
    }
}

/// Fitted per-column transforms of one view, plus standardization for the
/// linear view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub view: FeatureView,
    pub transforms: Vec<ColumnTransform>,
    pub output_names: Vec<String>,
    /// (mean, std) per output column; empty for the tree view.
    pub scaling: Vec<(f64, f64)>,
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl FeaturePipeline {
    /// Fits the view on the whole dataset and returns it with the training
    /// matrix. Target-encoded columns in the training matrix are computed
    /// out of fold; the stored encoders use full-data statistics.
    pub fn fit(
        dataset: &Dataset,
        encoders: &BTreeMap<String, EncoderSpec>,
        folds: &FoldAssignment,
        view: FeatureView,
    ) -> Result<(FeaturePipeline, FeatureMatrix)> {
        let task = dataset.task();
        let y = dataset.target();
        let mut transforms = Vec::new();
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for col in dataset.columns() {
            match &col.data {
                ColumnData::Numeric { values, .. } => {
                    let t = match view {
                        FeatureView::Tree => ColumnTransform::Raw {
                            source: col.name.clone(),
                        },
                        FeatureView::Linear => ColumnTransform::Imputed {
                            source: col.name.clone(),
                            median: median(values),
                            indicator: values.iter().any(|v| v.is_nan()),
                        },
                    };
                    names.extend(t.output_names());
                    columns.extend(t.apply(dataset.frame())?);
                    transforms.push(t);
                }
                ColumnData::Category { codes, dictionary } => {
                    let spec = encoders.get(&col.name);
                    let kind = category_kind(view, spec, dictionary.len());
                    let t = match kind {
                        EncoderKind::Frequency => ColumnTransform::Frequency {
                            source: col.name.clone(),
                            encoder: FrequencyEncoder::fit(codes),
                        },
                        EncoderKind::OneHot => ColumnTransform::OneHot {
                            source: col.name.clone(),
                            levels: dictionary.len(),
                        },
                        _ => {
                            let alpha = spec.map_or(2.0, |s| s.alpha);
                            ColumnTransform::Target {
                                source: col.name.clone(),
                                encoder: TargetEncoder::fit(codes, &encoding_targets(&task, y), alpha),
                            }
                        }
                    };
                    names.extend(t.output_names());
                    match &t {
                        ColumnTransform::Target { encoder, .. } => {
                            columns.extend(oof_columns(codes, y, &task, folds, encoder)?);
                        }
                        _ => columns.extend(t.apply(dataset.frame())?),
                    }
                    transforms.push(t);
                }
            }
        }
        let scaling = match view {
            FeatureView::Tree => Vec::new(),
            FeatureView::Linear => columns.iter().map(|c| mean_std(c)).collect(),
        };
        let pipeline = FeaturePipeline {
            view,
            transforms,
            output_names: names.clone(),
            scaling,
        };
        let mut matrix = FeatureMatrix::new(names, columns)?;
        matrix.n_rows = dataset.n_rows();
        pipeline.scale(&mut matrix);
        Ok((pipeline, matrix))
    }

    /// Applies the fitted view to new rows.
    pub fn transform(&self, frame: &Frame) -> Result<FeatureMatrix> {
        let mut columns = Vec::with_capacity(self.output_names.len());
        for t in &self.transforms {
            columns.extend(t.apply(frame)?);
        }
        let mut matrix = FeatureMatrix::new(self.output_names.clone(), columns)?;
        matrix.n_rows = frame.n_rows;
        self.scale(&mut matrix);
        Ok(matrix)
    }

    fn scale(&self, matrix: &mut FeatureMatrix) {
        for (col, (mean, std)) in matrix.columns.iter_mut().zip(&self.scaling) {
            for v in col.iter_mut() {
                *v = (*v - mean) / std;
            }
        }
    }

    /// Input columns feeding the given output columns, in pipeline order.
    pub fn sources_of(&self, outputs: &[String]) -> Vec<String> {
        self.transforms
            .iter()
            .filter(|t| t.output_names().iter().any(|n| outputs.contains(n)))
            .map(|t| t.source().to_string())
            .collect()
    }

    /// Output columns produced from the given input columns.
    pub fn outputs_of(&self, sources: &[String]) -> Vec<String> {
        self.transforms
            .iter()
            .filter(|t| sources.iter().any(|s| s == t.source()))
            .flat_map(|t| t.output_names())
            .collect()
    }
}

fn category_kind(view: FeatureView, spec: Option<&EncoderSpec>, cardinality: usize) -> EncoderKind {
    match view {
        FeatureView::Tree => match spec.map(|s| s.kind) {
            Some(EncoderKind::Frequency) => EncoderKind::Frequency,
            _ => EncoderKind::OofTarget,
        },
        FeatureView::Linear => {
            if cardinality <= LINEAR_ONE_HOT_CAP {
                EncoderKind::OneHot
            } else {
                EncoderKind::OofTarget
            }
        }
    }
}

fn oof_columns(
    codes: &[i32],
    y: &[f64],
    task: &Task,
    folds: &FoldAssignment,
    encoder: &TargetEncoder,
) -> Result<Vec<Vec<f64>>> {
    let alpha = encoder.alpha();
    crate::autotyping::oof_target_encode(codes, y, task, folds, alpha)
}
