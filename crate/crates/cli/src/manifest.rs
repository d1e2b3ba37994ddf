use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::invocation::Invocation;

/// Record of one run, written next to its outputs so it can be replayed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Configuration files read by the run, keyed by role.
    pub config_files: BTreeMap<String, PathBuf>,
    /// The resolved command, including every configuration value and seed.
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn new(
        invocation: Invocation,
        output: PathBuf,
        config_files: Vec<(String, PathBuf)>,
        artifacts: BTreeMap<String, PathBuf>,
        started_at: DateTime<Utc>,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_files: config_files.into_iter().collect(),
            seed: invocation.seed(),
            invocation,
            output,
            artifacts,
            started_at,
            finished_at: Utc::now(),
        }
    }

    /// `<out>/run_manifest.json` for directory outputs, `<out>.run.json` otherwise.
    pub fn location(&self) -> PathBuf {
        location(&self.output, self.invocation.writes_directory())
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.location();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn location(out: &Path, directory: bool) -> PathBuf {
    if directory {
        out.join("run_manifest.json")
    } else {
        let mut name = out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".run.json");
        out.with_file_name(name)
    }
}
