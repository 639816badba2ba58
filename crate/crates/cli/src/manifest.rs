use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use meltpinn_core::io::{hash_file, write_atomic};

use crate::Failure;

/// Record of one command: what ran, with which resolved settings and
/// inputs, and how it ended.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub exit_status: u8,
    pub results: serde_json::Value,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: Vec<String>, seed: Option<u64>, threads: usize) -> Self {
        RunManifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            threads,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0.0,
            exit_status: 0,
            results: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let h = hash_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn finish(mut self, code: u8, results: serde_json::Value) -> Self {
        self.exit_status = code;
        self.results = results;
        self.finished_unix = now();
        self
    }

    pub fn write(&self, path: &Path) -> meltpinn_core::Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(path, &bytes)
    }
}
