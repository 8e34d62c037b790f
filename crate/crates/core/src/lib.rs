//! Tabular AutoML engine.
//!
//! The pipeline reads a CSV table, decides column types, encodes features,
//! builds cross-validation folds, trains an L2 linear model and two flavors
//! of histogram gradient boosting (each with expert and tuned parameters),
//! optionally stacks them, and blends the last level with coordinate-descent
//! weights, all under a wall-clock budget.

pub mod autotyping;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod learners;
pub mod orchestrator;
pub mod selection;
pub mod task;
pub mod tuning;
pub mod validation;

pub use error::{LamaError, Result};
pub use task::{MetricSpec, Task, TaskKind, TimeBudget};
