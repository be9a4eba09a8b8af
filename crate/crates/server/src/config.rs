use std::path::{Path, PathBuf};

use nca_core::data::apply_override;
use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::ServerError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub checkpoint: PathBuf,
}

/// Which checkpoints to serve and session limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub models: Vec<ModelEntry>,
    /// Sessions without requests or stream connections for this long are
    /// removed.
    #[serde(default = "default_idle")]
    pub idle_timeout_secs: u64,
    /// Metric entries kept per session.
    #[serde(default = "default_history")]
    pub history: usize,
    /// Upper bound for `run(rate)` in steps per second.
    #[serde(default = "default_max_rate")]
    pub max_rate: f64,
}

fn default_idle() -> u64 {
    600
}
fn default_history() -> usize {
    4096
}
fn default_max_rate() -> f64 {
    1000.0
}

impl ServeConfig {
    pub fn new(models: Vec<ModelEntry>) -> Self {
        Self {
            models,
            idle_timeout_secs: default_idle(),
            history: default_history(),
            max_rate: default_max_rate(),
        }
    }
}

/// Parses a serve config; relative checkpoint paths resolve against the
/// config file's directory.
pub fn load_serve_config(path: &Path, overrides: &[(String, String)]) -> Result<ServeConfig, ServerError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
    let mut doc: Value =
        serde_yaml::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
    for (k, v) in overrides {
        apply_override(&mut doc, k, v).map_err(|e| ServerError::Config(e.to_string()))?;
    }
    let mut cfg: ServeConfig =
        serde_yaml::from_value(doc).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for m in &mut cfg.models {
        if m.checkpoint.is_relative() {
            m.checkpoint = base.join(&m.checkpoint);
        }
    }
    Ok(cfg)
}
