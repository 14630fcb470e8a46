//! Run manifests: what ran, with which seeds, and what it produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rectiflow::{BoundaryReport, ScoreNormRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    /// Mean of the last (up to) ten logged batch losses.
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub sampler: String,
    pub steps: usize,
    pub noise_draws: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub covariance_trace: f64,
    /// Sample covariance trace divided by the target's.
    pub trace_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub score_profile: Vec<ScoreNormRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samplers: Vec<SamplerSummary>,
}

impl MetricsSummary {
    pub fn sampler(&self, name: &str) -> Option<&SamplerSummary> {
        self.samplers.iter().find(|s| s.sampler == name)
    }

    pub fn score_norm_at(&self, t: f64) -> Option<f64> {
        self.score_profile.iter().find(|r| r.t == t).map(|r| r.mean_norm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub started_at: String,
    pub finished_at: String,
    /// Seed of every stage, derived from the master seed.
    pub seeds: BTreeMap<String, u64>,
    /// Every file the run wrote, relative to its output directory, excluding the manifest itself.
    pub files: Vec<String>,
    pub metrics: MetricsSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Other(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Other(format!("{}: {e}", path.display())))
    }
}

/// `sha256:` followed by the hex digest of the config's canonical JSON form.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    #[test]
    fn digest_tracks_content() {
        let a = parse_config_str("seed = 1\n[data]\nkind = \"gaussian\"\nmean = [0.0]\nvariances = [1.0]\n").unwrap();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.seed = 2;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert!(config_digest(&a).starts_with("sha256:"));
        assert_eq!(config_digest(&a).len(), 7 + 64);
    }
}
