use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::settings::ExperimentConfig;
use crate::error::Result;

/// The JSON summary written next to every experiment's CSV output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: Value,
    pub metrics: BTreeMap<String, Value>,
    pub verdicts: BTreeMap<String, bool>,
}

impl Summary {
    pub fn new(experiment: &str, cfg: &ExperimentConfig) -> Self {
        let config = cfg.resolved();
        Self {
            experiment: experiment.to_string(),
            config_hash: config_hash(&config),
            seed: cfg.seed,
            config,
            metrics: BTreeMap::new(),
            verdicts: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Serialize) -> &mut Self {
        self.metrics.insert(key.into(), serde_json::to_value(value).expect("metric serializes"));
        self
    }

    pub fn verdict(&mut self, key: impl Into<String>, passed: bool) -> &mut Self {
        self.verdicts.insert(key.into(), passed);
        self
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    /// Writes `<dir>/<experiment>_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}_summary.json", self.experiment));
        let mut out = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, self).map_err(std::io::Error::from)?;
        writeln!(out)?;
        out.flush()?;
        Ok(path)
    }
}

/// SHA-256 of the compact JSON rendering (keys are sorted).
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates `<dir>/<name>` and hands a buffered writer to `body`.
pub fn write_csv_file<F>(dir: &Path, name: &str, body: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut out = BufWriter::new(File::create(&path)?);
    body(&mut out)?;
    out.flush()?;
    Ok(path)
}
