use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ncgl::experiment::RunConfig;
use ncgl::models::GeneratorSpec;
use ncgl::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Record of one training run. Holds the resolved config, so a manifest can
/// be fed back to `train --config` to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub toolkit_version: String,
    pub metric_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub generator: GeneratorSpec,
    /// Accuracy of the uniform flip on the training labels (mean diagonal of
    /// the corrupting channel).
    pub label_accuracy: f64,
    pub gen_label_acc: f64,
    pub m_error: Option<f64>,
    pub recovery_acc: Option<f64>,
    pub config: RunConfig,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// JSON with object keys sorted at every level and no whitespace.
pub fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> =
                keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&map[*k]))).collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let v = serde_json::to_value(cfg)?;
    Ok(format!("{:x}", Sha256::digest(canonical_json(&v).as_bytes())))
}

/// Reads a run config, or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let inner = match v.get("config_hash").and(v.get("config")) {
        Some(c) => c.clone(),
        None => v,
    };
    Ok(serde_json::from_value(inner)?)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
