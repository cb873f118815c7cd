use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};
use sgsplat::Result;
use sha2::{Digest, Sha256};

/// Sidecar record written next to every command output.
pub struct Manifest {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: Map<String, Value>,
    timings: Map<String, Value>,
    results: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            command,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            inputs: Map::new(),
            timings: Map::new(),
            results: Map::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), json!({ "sha256": hex }));
    }

    /// Runs `f` and records its wall-clock time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings
            .insert(phase.to_string(), json!(start.elapsed().as_secs_f64()));
        out
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = sidecar(out, "manifest.json");
        let doc = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "threads": rayon::current_num_threads(),
            "config": self.config,
            "inputs": self.inputs,
            "timings_s": self.timings,
            "results": self.results,
        });
        let text = serde_json::to_string_pretty(&doc).expect("manifest is valid json");
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// `out.ext` -> `out.<suffix>`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}
