//! Per-invocation record: `run_manifest.json` next to the stage outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
struct Phase {
    name: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: String,
    argv: Vec<String>,
    version: &'static str,
    config_hash: Option<String>,
    seed: Option<u64>,
    /// Input path to sha256 of its bytes.
    data_fingerprints: BTreeMap<String, String>,
    outputs: Vec<String>,
    started_unix: u64,
    phases: Vec<Phase>,
    total_seconds: f64,
    #[serde(skip)]
    clock: Instant,
    #[serde(skip)]
    phase_clock: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        let now = Instant::now();
        Self {
            command: command.to_owned(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: None,
            seed: None,
            data_fingerprints: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            phases: Vec::new(),
            total_seconds: 0.0,
            clock: now,
            phase_clock: now,
        }
    }

    pub fn config(&mut self, resolved_toml: &str, seed: u64) {
        self.config_hash = Some(sha256_hex(resolved_toml.as_bytes()));
        self.seed = Some(seed);
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.data_fingerprints
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Closes the current phase.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push(Phase {
            name: name.to_owned(),
            seconds: (now - self.phase_clock).as_secs_f64(),
        });
        self.phase_clock = now;
    }

    pub fn write(mut self, path: &Path) -> anyhow::Result<PathBuf> {
        self.total_seconds = self.clock.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self).expect("run manifest serializes");
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_owned())
    }
}
