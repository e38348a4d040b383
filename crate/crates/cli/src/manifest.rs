//! Run manifests: the resolved config snapshot, seed, artifact paths and
//! wall-clock time needed to reproduce a command's outputs exactly.

use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    started: Instant,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seed: u64,
        started: Instant,
    ) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            artifacts: BTreeMap::new(),
            wall_clock_seconds: 0.0,
            started,
        }
    }

    pub fn artifact(mut self, name: impl Into<String>, path: &Path) -> Self {
        self.artifacts.insert(name.into(), path.display().to_string());
        self
    }

    /// Write manifest.json into `out`, checking that every referenced
    /// artifact actually exists.
    pub fn write(mut self, out: &Path) -> anyhow::Result<()> {
        for (name, path) in &self.artifacts {
            anyhow::ensure!(
                Path::new(path).exists(),
                "artifact {name} missing at {path}"
            );
        }
        self.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}
