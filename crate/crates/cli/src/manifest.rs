use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use branching_target::GridSpec;
use serde::Serialize;
use serde_json::Value;

/// What ran, on which inputs, and what it wrote. Everything except
/// `wall_clock_seconds` is a function of the inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub scenario_file: String,
    pub scenario_digest: String,
    pub seeds: Vec<u64>,
    pub grid: Option<GridSpec>,
    pub settings: BTreeMap<String, Value>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, scenario_file: &Path, scenario_digest: String) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_file: scenario_file.display().to_string(),
            scenario_digest,
            seeds: Vec::new(),
            grid: None,
            settings: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.settings.insert(key.to_string(), serde_json::to_value(value).expect("serialisable setting"));
    }

    pub fn write(mut self, dir: &Path, started: Instant) -> std::io::Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        self.outputs.sort();
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        fs::write(dir.join("manifest.json"), text + "\n")
    }
}
