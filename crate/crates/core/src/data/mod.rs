//! Ingestion, parsing and role bookkeeping.

mod dataset;
pub mod datetime;
mod raw;

pub use dataset::{
    build_dataset, infer_task_kind, load_role_hints, numeric_key, numeric_to_codes, Column,
    ColumnData, ColumnMeta, Dataset, DatasetMeta, DatasetOptions, Frame, NumericOrigin, RoleHints,
    RoleKind, Schema, SourcePlan,
};
pub use datetime::{expand_datetime, DateFormat, DatePart};
pub use raw::{is_missing_token, read_csv, read_csv_table, RawTable, MISSING_TOKENS};
