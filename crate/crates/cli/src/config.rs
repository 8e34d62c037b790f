use std::path::{Path, PathBuf};

use lama_core::data::RoleHints;
use lama_core::orchestrator::PresetConfig;
use lama_core::{LamaError, MetricSpec, Result, TaskKind};
use serde::{Deserialize, Serialize};

/// JSON run configuration. Command-line flags override its fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Where `predict` reads the model from when `--model` is absent.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    /// Inferred from the target column when absent.
    #[serde(default)]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub hints: RoleHints,
    /// More than one seed averages several runs of the preset.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub preset: PresetConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| LamaError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LamaError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let c: RunConfig = serde_json::from_str(r#"{"target": "y", "preset": {"budget_seconds": 12}}"#).unwrap();
        assert_eq!(c.target.as_deref(), Some("y"));
        assert_eq!(c.preset.budget_seconds, 12.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": "a.csv"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"preset": {"budget": 1}}"#).is_err());
    }
}
