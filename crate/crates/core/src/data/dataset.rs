use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::datetime::{
    detect_format, DateFormat, DatePart, DATETIME_MIN_PARSE_RATE, DATE_PARTS, DETECT_FORMATS,
    HINT_FORMATS,
};
use super::raw::RawTable;
use crate::error::{LamaError, Result};
use crate::task::{MetricSpec, Task, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Numeric,
    Category,
    Datetime,
    Target,
    Drop,
}

pub type RoleHints = BTreeMap<String, RoleKind>;

/// Reads a JSON object mapping column name to role string.
pub fn load_role_hints(path: impl AsRef<Path>) -> Result<RoleHints> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LamaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| LamaError::Config(format!("role hints: {e}")))
}

/// How a numeric column came to be numeric. Only parsed integer/float
/// columns are candidates for auto-typing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericOrigin {
    Integer,
    Float { fractional: bool },
    DatetimePart,
    Hinted,
}

/// Column storage. Missing numeric cells are NaN; missing or unseen
/// categories have code -1.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric {
        values: Vec<f64>,
        origin: NumericOrigin,
    },
    Category {
        codes: Vec<i32>,
        dictionary: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>, origin: NumericOrigin) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric { values, origin },
        }
    }

    pub fn category(name: impl Into<String>, codes: Vec<i32>, dictionary: Vec<String>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Category { codes, dictionary },
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric { values, .. } => values.len(),
            ColumnData::Category { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn role(&self) -> RoleKind {
        match self.data {
            ColumnData::Numeric { .. } => RoleKind::Numeric,
            ColumnData::Category { .. } => RoleKind::Category,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Numeric { values, .. } => values[row].is_nan(),
            ColumnData::Category { codes, .. } => codes[row] < 0,
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    pub fn missing_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.len() as f64
        }
    }

    /// Distinct non-missing values.
    pub fn unique_count(&self) -> usize {
        match &self.data {
            ColumnData::Numeric { values, .. } => values
                .iter()
                .filter(|v| !v.is_nan())
                .map(|v| canonical_bits(*v))
                .collect::<BTreeSet<_>>()
                .len(),
            ColumnData::Category { codes, .. } => codes
                .iter()
                .filter(|&&c| c >= 0)
                .collect::<BTreeSet<_>>()
                .len(),
        }
    }

    pub fn numeric_values(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric { values, .. } => Some(values),
            ColumnData::Category { .. } => None,
        }
    }

    pub fn category_codes(&self) -> Option<(&[i32], &[String])> {
        match &self.data {
            ColumnData::Category { codes, dictionary } => Some((codes, dictionary)),
            ColumnData::Numeric { .. } => None,
        }
    }
}

fn canonical_bits(v: f64) -> u64 {
    (v + 0.0).to_bits()
}

/// Dictionary key for a numeric value re-typed as category.
pub fn numeric_key(v: f64) -> String {
    format!("{}", v + 0.0)
}

/// Dense integer codes for the distinct non-missing values of a numeric
/// slice, ordered by value. Returns (codes, sorted distinct values).
pub fn numeric_to_codes(values: &[f64]) -> (Vec<i32>, Vec<f64>) {
    let mut distinct: Vec<f64> = values
        .iter()
        .filter(|v| !v.is_nan())
        .map(|v| v + 0.0)
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let codes = values
        .iter()
        .map(|v| {
            if v.is_nan() {
                -1
            } else {
                let key = v + 0.0;
                distinct
                    .binary_search_by(|d| d.total_cmp(&key))
                    .map_or(-1, |i| i as i32)
            }
        })
        .collect();
    (codes, distinct)
}

/// A set of equally long feature columns, without target.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub n_rows: usize,
    pub columns: Vec<Column>,
}

impl Frame {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// How one raw input column is turned into model columns at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourcePlan {
    Numeric {
        name: String,
        origin: NumericOrigin,
    },
    Category {
        name: String,
        dictionary: Vec<String>,
        /// Keys are canonical renderings of numbers; cells are parsed before lookup.
        numeric_keys: bool,
    },
    Datetime {
        name: String,
        format: DateFormat,
        parts: Vec<DatePart>,
    },
    Drop {
        name: String,
        reason: String,
    },
}

impl SourcePlan {
    pub fn name(&self) -> &str {
        match self {
            SourcePlan::Numeric { name, .. }
            | SourcePlan::Category { name, .. }
            | SourcePlan::Datetime { name, .. }
            | SourcePlan::Drop { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub target_name: String,
    pub task: Task,
    /// Original class labels, indexed by encoded label. Empty for regression.
    pub classes: Vec<String>,
    pub sources: Vec<SourcePlan>,
}

impl Schema {
    /// Rebuilds model columns from a raw table using the stored plans.
    /// Extra raw columns (including the target) are ignored.
    pub fn apply(&self, raw: &RawTable) -> Result<Frame> {
        let mut columns = Vec::new();
        for plan in &self.sources {
            if matches!(plan, SourcePlan::Drop { .. }) {
                continue;
            }
            let cells = raw.column(plan.name()).ok_or_else(|| {
                LamaError::ColumnMismatch(format!("input is missing column `{}`", plan.name()))
            })?;
            match plan {
                SourcePlan::Numeric { name, origin } => {
                    columns.push(Column::numeric(name.clone(), parse_numeric(cells), *origin));
                }
                SourcePlan::Category {
                    name,
                    dictionary,
                    numeric_keys,
                } => {
                    let index: HashMap<&str, i32> = dictionary
                        .iter()
                        .enumerate()
                        .map(|(i, k)| (k.as_str(), i as i32))
                        .collect();
                    let codes = cells
                        .iter()
                        .map(|c| match c {
                            None => -1,
                            Some(s) if *numeric_keys => parse_f64(s)
                                .and_then(|v| index.get(numeric_key(v).as_str()).copied())
                                .unwrap_or(-1),
                            Some(s) => index.get(s.as_str()).copied().unwrap_or(-1),
                        })
                        .collect();
                    columns.push(Column::category(name.clone(), codes, dictionary.clone()));
                }
                SourcePlan::Datetime {
                    name,
                    format,
                    parts,
                } => {
                    let epochs: Vec<Option<i64>> = cells
                        .iter()
                        .map(|c| c.as_deref().and_then(|s| format.parse(s)))
                        .collect();
                    for part in parts {
                        let values = epochs
                            .iter()
                            .map(|e| e.map_or(f64::NAN, |s| part.extract(s)))
                            .collect();
                        columns.push(Column::numeric(
                            part.column_name(name),
                            values,
                            NumericOrigin::DatetimePart,
                        ));
                    }
                }
                SourcePlan::Drop { .. } => unreachable!(),
            }
        }
        Ok(Frame {
            n_rows: raw.n_rows,
            columns,
        })
    }

    /// Name of the raw column a model column was derived from.
    pub fn source_of(&self, column: &str) -> Option<&str> {
        self.sources.iter().map(SourcePlan::name).find(|src| {
            *src == column
                || DATE_PARTS
                    .iter()
                    .any(|p| p.column_name(src) == column)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub role: RoleKind,
    pub unique_count: usize,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_rows: usize,
    pub n_features: usize,
    pub columns: Vec<ColumnMeta>,
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

impl DatasetMeta {
    fn compute(frame: &Frame, dropped: Vec<String>, warnings: Vec<String>) -> Self {
        DatasetMeta {
            n_rows: frame.n_rows,
            n_features: frame.columns.len(),
            columns: frame
                .columns
                .iter()
                .map(|c| ColumnMeta {
                    name: c.name.clone(),
                    role: c.role(),
                    unique_count: c.unique_count(),
                    missing_rate: c.missing_rate(),
                })
                .collect(),
            dropped,
            warnings,
        }
    }
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone, Default)]
pub struct DatasetOptions {
    pub hints: RoleHints,
    /// Fold count used for the small-class warning; defaults to 5.
    pub k_folds: Option<usize>,
    pub metric: Option<MetricSpec>,
}

/// Immutable typed training table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frame: Frame,
    target: Vec<f64>,
    schema: Schema,
    meta: DatasetMeta,
    /// Epoch seconds of datetime source columns (NaN = missing), kept for
    /// time-ordered validation after expansion.
    datetime_sources: BTreeMap<String, Vec<f64>>,
}

impl Dataset {
    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn columns(&self) -> &[Column] {
        &self.frame.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.frame.column(name)
    }

    /// Encoded target: class index for classification, value for regression.
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn task(&self) -> Task {
        self.schema.task
    }

    pub fn classes(&self) -> &[String] {
        &self.schema.classes
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn n_rows(&self) -> usize {
        self.frame.n_rows
    }

    pub fn datetime_source(&self, name: &str) -> Option<&[f64]> {
        self.datetime_sources.get(name).map(Vec::as_slice)
    }

    /// Re-types the named numeric columns as categories (values become keys).
    pub fn with_categories(&self, names: &[String]) -> Result<Dataset> {
        let mut out = self.clone();
        for name in names {
            let idx = out
                .frame
                .column_index(name)
                .ok_or_else(|| LamaError::ColumnMismatch(format!("no column `{name}`")))?;
            let values = out.frame.columns[idx]
                .numeric_values()
                .ok_or_else(|| {
                    LamaError::InvalidInput(format!("column `{name}` is not numeric"))
                })?
                .to_vec();
            let (codes, distinct) = numeric_to_codes(&values);
            let dictionary: Vec<String> = distinct.iter().map(|v| numeric_key(*v)).collect();
            out.frame.columns[idx] = Column::category(name.clone(), codes, dictionary.clone());
            for plan in out.schema.sources.iter_mut() {
                if plan.name() == name {
                    *plan = SourcePlan::Category {
                        name: name.clone(),
                        dictionary: dictionary.clone(),
                        numeric_keys: true,
                    };
                }
            }
        }
        out.meta = DatasetMeta::compute(
            &out.frame,
            out.meta.dropped.clone(),
            out.meta.warnings.clone(),
        );
        Ok(out)
    }

    /// Assembles a dataset directly from typed columns (used by tests and
    /// synthetic generators). Builds a matching schema.
    pub fn from_columns(columns: Vec<Column>, target: Vec<f64>, task: Task) -> Result<Dataset> {
        let n_rows = target.len();
        for c in &columns {
            if c.len() != n_rows {
                return Err(LamaError::LengthMismatch {
                    expected: n_rows,
                    found: c.len(),
                });
            }
        }
        validate_encoded_target(&target, task)?;
        let sources = columns
            .iter()
            .map(|c| match &c.data {
                ColumnData::Numeric { origin, .. } => SourcePlan::Numeric {
                    name: c.name.clone(),
                    origin: *origin,
                },
                ColumnData::Category { dictionary, .. } => SourcePlan::Category {
                    name: c.name.clone(),
                    dictionary: dictionary.clone(),
                    numeric_keys: false,
                },
            })
            .collect();
        let classes = match task.kind {
            TaskKind::Regression => Vec::new(),
            _ => (0..task.n_classes).map(|k| k.to_string()).collect(),
        };
        let frame = Frame { n_rows, columns };
        let meta = DatasetMeta::compute(&frame, Vec::new(), Vec::new());
        Ok(Dataset {
            frame,
            target,
            schema: Schema {
                target_name: "target".to_string(),
                task,
                classes,
                sources,
            },
            meta,
            datetime_sources: BTreeMap::new(),
        })
    }

    /// A dataset restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .frame
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: match &c.data {
                    ColumnData::Numeric { values, origin } => ColumnData::Numeric {
                        values: rows.iter().map(|&r| values[r]).collect(),
                        origin: *origin,
                    },
                    ColumnData::Category { codes, dictionary } => ColumnData::Category {
                        codes: rows.iter().map(|&r| codes[r]).collect(),
                        dictionary: dictionary.clone(),
                    },
                },
            })
            .collect();
        let frame = Frame {
            n_rows: rows.len(),
            columns,
        };
        let meta = DatasetMeta::compute(&frame, self.meta.dropped.clone(), self.meta.warnings.clone());
        Dataset {
            frame,
            target: rows.iter().map(|&r| self.target[r]).collect(),
            schema: self.schema.clone(),
            meta,
            datetime_sources: self
                .datetime_sources
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
                .collect(),
        }
    }
}

fn validate_encoded_target(target: &[f64], task: Task) -> Result<()> {
    match task.kind {
        TaskKind::Regression => {
            if let Some(v) = target.iter().find(|v| !v.is_finite()) {
                return Err(LamaError::InvalidTarget(format!("non-finite value {v}")));
            }
        }
        TaskKind::Binary | TaskKind::Multiclass => {
            if task.kind == TaskKind::Binary && task.n_classes != 2 {
                return Err(LamaError::InvalidTarget("binary task needs 2 classes".into()));
            }
            if task.kind == TaskKind::Multiclass && task.n_classes < 3 {
                return Err(LamaError::InvalidTarget(
                    "multiclass task needs at least 3 classes".into(),
                ));
            }
            if let Some(v) = target
                .iter()
                .find(|v| v.fract() != 0.0 || **v < 0.0 || **v as usize >= task.n_classes)
            {
                return Err(LamaError::InvalidTarget(format!("label {v} out of range")));
            }
        }
    }
    Ok(())
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_numeric(cells: &[Option<String>]) -> Vec<f64> {
    cells
        .iter()
        .map(|c| c.as_deref().and_then(parse_f64).unwrap_or(f64::NAN))
        .collect()
}

enum Parsed {
    Numeric(Vec<f64>, NumericOrigin),
    Category(Vec<i32>, Vec<String>),
    Datetime(Vec<Option<i64>>, DateFormat),
}

fn parse_category(cells: &[Option<String>]) -> (Vec<i32>, Vec<String>) {
    let dictionary: Vec<String> = cells
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, i32> = dictionary
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i as i32))
        .collect();
    let codes = cells
        .iter()
        .map(|c| c.as_deref().map_or(-1, |s| index[s]))
        .collect();
    (codes, dictionary)
}

/// Trial cascade: integer, float, datetime, category.
fn parse_cascade(cells: &[Option<String>]) -> Parsed {
    let present = || cells.iter().flatten();
    if present().all(|s| s.trim().parse::<i64>().is_ok()) {
        return Parsed::Numeric(parse_numeric(cells), NumericOrigin::Integer);
    }
    if present().all(|s| parse_f64(s).is_some()) {
        let values = parse_numeric(cells);
        let fractional = values.iter().any(|v| !v.is_nan() && v.fract() != 0.0);
        return Parsed::Numeric(values, NumericOrigin::Float { fractional });
    }
    if let Some(format) = detect_format(cells, &DETECT_FORMATS, DATETIME_MIN_PARSE_RATE) {
        let epochs = cells
            .iter()
            .map(|c| c.as_deref().and_then(|s| format.parse(s)))
            .collect();
        return Parsed::Datetime(epochs, format);
    }
    let (codes, dictionary) = parse_category(cells);
    Parsed::Category(codes, dictionary)
}

fn parse_hinted(cells: &[Option<String>], role: RoleKind) -> Option<Parsed> {
    match role {
        RoleKind::Numeric => Some(Parsed::Numeric(parse_numeric(cells), NumericOrigin::Hinted)),
        RoleKind::Category => {
            let (codes, dictionary) = parse_category(cells);
            Some(Parsed::Category(codes, dictionary))
        }
        RoleKind::Datetime => {
            // best-covering format; a column nothing parses is demoted to category
            let present: Vec<&str> = cells.iter().flatten().map(String::as_str).collect();
            let best = HINT_FORMATS
                .iter()
                .map(|f| (*f, present.iter().filter(|c| f.parse(c).is_some()).count()))
                .filter(|(_, n)| *n > 0)
                .max_by_key(|(_, n)| *n);
            Some(match best {
                Some((format, _)) => Parsed::Datetime(
                    cells
                        .iter()
                        .map(|c| c.as_deref().and_then(|s| format.parse(s)))
                        .collect(),
                    format,
                ),
                None => {
                    let (codes, dictionary) = parse_category(cells);
                    Parsed::Category(codes, dictionary)
                }
            })
        }
        RoleKind::Drop | RoleKind::Target => None,
    }
}

/// Decides the task kind from the raw target when none is configured:
/// two labels give binary, non-numeric labels give multiclass, and anything
/// else is regression.
pub fn infer_task_kind(target: &[Option<String>]) -> TaskKind {
    let labels: BTreeSet<&str> = target.iter().flatten().map(|s| s.trim()).collect();
    if labels.len() == 2 {
        TaskKind::Binary
    } else if labels.iter().all(|s| parse_f64(s).is_some()) {
        TaskKind::Regression
    } else {
        TaskKind::Multiclass
    }
}

fn encode_labels(cells: &[String]) -> (Vec<f64>, Vec<String>) {
    let distinct: BTreeSet<&str> = cells.iter().map(|s| s.trim()).collect();
    let mut classes: Vec<String> = distinct.iter().map(|s| s.to_string()).collect();
    if classes.iter().all(|s| parse_f64(s).is_some()) {
        classes.sort_by(|a, b| parse_f64(a).unwrap().total_cmp(&parse_f64(b).unwrap()));
    }
    let index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let y = cells.iter().map(|s| index[s.trim()] as f64).collect();
    (y, classes)
}

/// Types every column of `raw`, encodes the target and records the schema
/// needed to repeat the same transformation on new data.
pub fn build_dataset(
    raw: &RawTable,
    target_name: &str,
    task_kind: TaskKind,
    options: &DatasetOptions,
) -> Result<Dataset> {
    let target_idx = raw
        .column_index(target_name)
        .ok_or_else(|| LamaError::MissingTarget(target_name.to_string()))?;
    for name in options.hints.keys() {
        if raw.column_index(name).is_none() {
            return Err(LamaError::Config(format!("role hint for unknown column `{name}`")));
        }
    }
    if let Some((name, _)) = options
        .hints
        .iter()
        .find(|(n, r)| **r == RoleKind::Target && n.as_str() != target_name)
    {
        return Err(LamaError::Config(format!(
            "column `{name}` hinted as target but the target is `{target_name}`"
        )));
    }

    let target_cells = &raw.columns[target_idx];
    let n_missing = target_cells.iter().filter(|c| c.is_none()).count();
    if n_missing > 0 {
        return Err(LamaError::MissingTargetValues {
            column: target_name.to_string(),
            count: n_missing,
        });
    }
    let target_cells: Vec<String> = target_cells.iter().flatten().cloned().collect();
    let k_folds = options.k_folds.unwrap_or(5);
    let mut warnings = Vec::new();

    let (target, classes, task) = match task_kind {
        TaskKind::Regression => {
            let y: Vec<f64> = target_cells
                .iter()
                .map(|s| {
                    parse_f64(s).ok_or_else(|| {
                        LamaError::InvalidTarget(format!("`{s}` is not a finite number"))
                    })
                })
                .collect::<Result<_>>()?;
            (y, Vec::new(), Task::regression())
        }
        TaskKind::Binary | TaskKind::Multiclass => {
            let (y, classes) = encode_labels(&target_cells);
            let task = if task_kind == TaskKind::Binary {
                if classes.len() != 2 {
                    return Err(LamaError::InvalidTarget(format!(
                        "binary target needs exactly 2 labels, found {}",
                        classes.len()
                    )));
                }
                Task::binary()
            } else {
                if classes.len() < 3 {
                    return Err(LamaError::InvalidTarget(format!(
                        "multiclass target needs at least 3 labels, found {}",
                        classes.len()
                    )));
                }
                Task::multiclass(classes.len())
            };
            let mut counts = vec![0usize; classes.len()];
            for &v in &y {
                counts[v as usize] += 1;
            }
            for (label, count) in classes.iter().zip(&counts) {
                if *count < k_folds {
                    warnings.push(format!(
                        "class `{label}` has {count} rows, fewer than {k_folds} folds; stratification degrades"
                    ));
                }
            }
            (y, classes, task)
        }
    };
    let task = match options.metric {
        Some(m) => task.with_metric(m)?,
        None => task,
    };

    let mut columns = Vec::new();
    let mut sources = Vec::new();
    let mut dropped = Vec::new();
    let mut datetime_sources = BTreeMap::new();
    for (idx, (name, cells)) in raw.column_names.iter().zip(&raw.columns).enumerate() {
        if idx == target_idx {
            continue;
        }
        let parsed = match options.hints.get(name) {
            Some(role) => parse_hinted(cells, *role),
            None => Some(parse_cascade(cells)),
        };
        let Some(parsed) = parsed else {
            sources.push(SourcePlan::Drop {
                name: name.clone(),
                reason: "hint".into(),
            });
            dropped.push(name.clone());
            continue;
        };
        match parsed {
            Parsed::Numeric(values, origin) => {
                let col = Column::numeric(name.clone(), values, origin);
                if col.unique_count() <= 1 {
                    sources.push(SourcePlan::Drop {
                        name: name.clone(),
                        reason: "constant".into(),
                    });
                    dropped.push(name.clone());
                } else {
                    sources.push(SourcePlan::Numeric {
                        name: name.clone(),
                        origin,
                    });
                    columns.push(col);
                }
            }
            Parsed::Category(codes, dictionary) => {
                let col = Column::category(name.clone(), codes, dictionary.clone());
                if col.unique_count() <= 1 {
                    sources.push(SourcePlan::Drop {
                        name: name.clone(),
                        reason: "constant".into(),
                    });
                    dropped.push(name.clone());
                } else {
                    sources.push(SourcePlan::Category {
                        name: name.clone(),
                        dictionary,
                        numeric_keys: false,
                    });
                    columns.push(col);
                }
            }
            Parsed::Datetime(epochs, format) => {
                let mut parts = Vec::new();
                for (part, (part_name, values)) in DATE_PARTS
                    .iter()
                    .zip(super::datetime::expand_datetime(name, &epochs))
                {
                    let col = Column::numeric(part_name.clone(), values, NumericOrigin::DatetimePart);
                    if col.unique_count() <= 1 {
                        dropped.push(part_name);
                    } else {
                        parts.push(*part);
                        columns.push(col);
                    }
                }
                sources.push(SourcePlan::Datetime {
                    name: name.clone(),
                    format,
                    parts,
                });
                datetime_sources.insert(
                    name.clone(),
                    epochs.iter().map(|e| e.map_or(f64::NAN, |s| s as f64)).collect(),
                );
            }
        }
    }

    let frame = Frame {
        n_rows: raw.n_rows,
        columns,
    };
    let meta = DatasetMeta::compute(&frame, dropped, warnings);
    Ok(Dataset {
        frame,
        target,
        schema: Schema {
            target_name: target_name.to_string(),
            task,
            classes,
            sources,
        },
        meta,
        datetime_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> RawTable {
        RawTable::from_reader(csv.as_bytes()).unwrap()
    }

    #[test]
    fn integer_column_becomes_numeric() {
        let raw = table("a,y\n1,0\n2,1\n3,0\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        let col = ds.column("a").unwrap();
        assert_eq!(col.numeric_values().unwrap(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            col.data,
            ColumnData::Numeric {
                origin: NumericOrigin::Integer,
                ..
            }
        ));
    }

    #[test]
    fn constant_column_is_dropped() {
        let raw = table("a,c,y\nx,1,0\nx,2,1\nx,3,1\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        assert!(ds.column("a").is_none());
        assert_eq!(ds.meta().dropped, vec!["a".to_string()]);
        assert!(matches!(ds.schema().sources[0], SourcePlan::Drop { .. }));
    }

    #[test]
    fn datetime_column_is_expanded() {
        let raw = table("t,y\n2021-01-02,1\n2021-02-03,0\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        let names = ds.frame().names();
        assert!(names.contains(&"t__month".to_string()));
        assert!(names.contains(&"t__day".to_string()));
        // year and hour are constant here
        assert!(!names.contains(&"t__year".to_string()));
        assert!(!names.contains(&"t__hour".to_string()));
        assert!(!names.contains(&"t".to_string()));
    }

    #[test]
    fn midnight_only_hour_is_dropped() {
        let raw = table("t,y\n2021-01-02T00:00,1\n2021-03-05T00:00,0\n2022-07-09T00:00,1\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        assert!(ds.meta().dropped.contains(&"t__hour".to_string()));
        assert!(ds.column("t__year").is_some());
    }

    #[test]
    fn missing_target_is_error() {
        let raw = table("a,y\n1,0\n2,NA\n");
        assert!(matches!(
            build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()),
            Err(LamaError::MissingTargetValues { count: 1, .. })
        ));
    }

    #[test]
    fn small_class_warning_recorded() {
        let raw = table("a,y\n1,a\n2,b\n3,c\n4,a\n5,b\n6,c\n");
        let ds = build_dataset(&raw, "y", TaskKind::Multiclass, &DatasetOptions::default()).unwrap();
        assert_eq!(ds.meta().warnings.len(), 3);
        assert_eq!(ds.task().n_classes, 3);
        assert_eq!(ds.target(), &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let raw = table("a,y\n1,10\n2,9\n3,10\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        assert_eq!(ds.classes(), &["9".to_string(), "10".to_string()]);
        assert_eq!(ds.target(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_rate_matches_mask() {
        let raw = table("a,b,y\n1,x,0\nNA,,1\n3,z,0\n4,NA,1\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        for meta in &ds.meta().columns {
            let col = ds.column(&meta.name).unwrap();
            assert_eq!(meta.missing_rate, col.missing_count() as f64 / 4.0);
        }
        assert_eq!(ds.meta().columns[0].missing_rate, 0.25);
        assert_eq!(ds.meta().columns[1].missing_rate, 0.5);
    }

    #[test]
    fn hints_override_cascade() {
        let raw = table("a,b,c,y\n1,1600000000,q,0\n2,1600086400,r,1\n3,1600172800,s,0\n");
        let mut hints = RoleHints::new();
        hints.insert("a".into(), RoleKind::Category);
        hints.insert("b".into(), RoleKind::Datetime);
        hints.insert("c".into(), RoleKind::Drop);
        let ds = build_dataset(
            &raw,
            "y",
            TaskKind::Binary,
            &DatasetOptions {
                hints,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.column("a").unwrap().role(), RoleKind::Category);
        assert!(ds.column("b__day").is_some());
        assert!(ds.column("c").is_none());
    }

    #[test]
    fn schema_reapplies_with_unseen_categories() {
        let raw = table("a,b,y\n1,x,0\n2,y,1\n3,x,0\n");
        let ds = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        let ds = ds.with_categories(&["a".to_string()]).unwrap();
        let new = table("b,a\nz,2\nx,7\n");
        let frame = ds.schema().apply(&new).unwrap();
        let (codes, _) = frame.column("b").unwrap().category_codes().unwrap();
        assert_eq!(codes, &[-1, 0]);
        let (codes, dict) = frame.column("a").unwrap().category_codes().unwrap();
        assert_eq!(dict, &["1", "2", "3"]);
        assert_eq!(codes, &[1, -1]);
        assert!(matches!(
            ds.schema().apply(&table("b\nx\n")),
            Err(LamaError::ColumnMismatch(_))
        ));
    }

    #[test]
    fn parse_is_deterministic() {
        let raw = table("a,b,t,y\n1.5,x,2021-01-01,0\n2,y,2021-02-01,1\n,x,2021-03-01,1\n");
        let a = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        let b = build_dataset(&raw, "y", TaskKind::Binary, &DatasetOptions::default()).unwrap();
        // NaN != NaN, so compare renderings
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn task_kind_inference() {
        let s = |v: &[&str]| v.iter().map(|x| Some(x.to_string())).collect::<Vec<_>>();
        assert_eq!(infer_task_kind(&s(&["a", "b", "a"])), TaskKind::Binary);
        assert_eq!(infer_task_kind(&s(&["a", "b", "c"])), TaskKind::Multiclass);
        assert_eq!(infer_task_kind(&s(&["1.5", "2", "3"])), TaskKind::Regression);
    }
}
