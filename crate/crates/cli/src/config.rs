//! Optional JSON run configuration. Every key is optional; flags win.

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub search: SearchSection,
    pub judge: JudgeSection,
    pub pairs: PairsSection,
    pub train: TrainSection,
    pub guide: GuideSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub iterations: Option<usize>,
    pub rollouts: Option<usize>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSection {
    /// `rule` or `remote`.
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub max_attempts: Option<usize>,
    pub backoff_ms: Option<Vec<u64>>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsSection {
    pub types: Option<String>,
    pub weights: Option<[f64; 5]>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dim: Option<usize>,
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuideSection {
    pub mode: Option<String>,
    pub n: Option<Vec<usize>>,
    pub masks: Option<Vec<String>>,
    pub epsilon: Option<f64>,
    pub episodes: Option<usize>,
    pub search_iterations: Option<usize>,
    pub search_rollouts: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let raw = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&raw)?)
    }
}
