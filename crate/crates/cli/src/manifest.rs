//! Run manifest: one JSON file per output directory listing every artifact
//! with the seeds and configuration hash that produced it.

use std::collections::BTreeMap;
use std::path::Path;

use fissile_uq::config::ExperimentConfig;
use fissile_uq::Result;
use serde_json::{json, Value};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Default)]
pub struct Record {
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
}

impl Record {
    pub fn seed(mut self, label: &str, s: u64) -> Self {
        self.seeds.insert(label.to_string(), s);
        self
    }

    pub fn artifact(mut self, name: impl Into<String>) -> Self {
        self.artifacts.push(name.into());
        self
    }
}

pub fn update(out: &Path, cfg: &ExperimentConfig, key: &str, record: Record) -> Result<()> {
    let path = out.join(FILE);
    let mut runs: BTreeMap<String, Value> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v.get("runs").cloned())
            .and_then(|r| serde_json::from_value(r).ok())
            .unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let hash = cfg.hash()?;
    std::fs::write(out.join("config.json"), cfg.canonical_json()? + "\n")?;
    let mut artifacts = record.artifacts;
    artifacts.sort();
    artifacts.dedup();
    runs.insert(
        key.to_string(),
        json!({
            "config_hash": hash,
            "master_seed": cfg.seed,
            "seeds": record.seeds,
            "artifacts": artifacts,
        }),
    );
    let manifest = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": "config.json",
        "config_hash": hash,
        "runs": runs,
    });
    std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
