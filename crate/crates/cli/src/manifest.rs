use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use entroloss::data::Dataset;
use serde::Serialize;

use crate::Failure;

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub dataset: BTreeMap<String, usize>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
    /// Output files, relative to the manifest.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &impl Serialize) -> Result<Self, Failure> {
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(|e| Failure::usage(e.to_string()))?,
            seeds: BTreeMap::new(),
            dataset: BTreeMap::new(),
            timestamp: timestamp(),
            artifacts: Vec::new(),
        })
    }

    pub fn seed(mut self, name: &'static str, value: u64) -> Self {
        self.seeds.insert(name, value);
        self
    }

    /// Records `<prefix>_total`, `<prefix>_informative` and
    /// `<prefix>_uninformative`.
    pub fn count_dataset(mut self, prefix: &str, ds: &Dataset) -> Self {
        let (uninformative, informative) = ds.class_counts();
        self.dataset.insert(format!("{prefix}_total"), ds.len());
        self.dataset.insert(format!("{prefix}_informative"), informative);
        self.dataset.insert(format!("{prefix}_uninformative"), uninformative);
        self
    }

    pub fn artifact(mut self, name: impl Into<String>) -> Self {
        self.artifacts.push(name.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Failure::usage(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}
