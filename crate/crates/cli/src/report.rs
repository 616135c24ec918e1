use std::path::Path;

use anyhow::Context;
use nixnet::BackendInfo;
use serde::Serialize;

use crate::config::Seed;

/// JSON record written by every command.
#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: String,
    pub command: String,
    pub seed: Seed,
    /// Resolved parameters and paths.
    pub config: serde_json::Value,
    pub backend: BackendInfo,
    pub metrics: serde_json::Value,
}

impl Report {
    pub fn new(
        command: &str,
        seed: Seed,
        config: serde_json::Value,
        metrics: serde_json::Value,
    ) -> Self {
        Self {
            tool: format!("nixnet {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed,
            config,
            backend: nixnet::backend_info(),
            metrics,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| nixnet::Error::io(dir, e))?;
        }
        std::fs::write(path, json)
            .map_err(|e| nixnet::Error::io(path, e))
            .with_context(|| "writing report")?;
        log::info!("report written to {}", path.display());
        Ok(())
    }
}
