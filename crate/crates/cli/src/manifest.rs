use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance record written into every artifact directory. A later run
/// into the same directory replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to the artifact directory.
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        let now = Utc::now();
        Self {
            command: command.into(),
            config_hash: config.hash(),
            config: config.clone(),
            seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: now,
            finished_at: now,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, name: impl Into<PathBuf>) {
        self.outputs.push(name.into());
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_at = Utc::now();
        self.outputs.sort();
        self.outputs.dedup();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self)?;
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
    }

    #[cfg(test)]
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_hash_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut m = RunManifest::start("split", &cfg);
        m.output("b.json");
        m.output("a.json");
        m.output("a.json");
        m.finish(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.outputs, [PathBuf::from("a.json"), PathBuf::from("b.json")]);
        assert_eq!(back.config_hash, back.config.hash());
        assert!(back.finished_at >= back.started_at);
    }
}
