//! TOML experiment files. Every section is optional; missing keys fall back
//! to the library defaults and command-line flags override both.
//!
//! ```toml
//! seed = 7
//!
//! [gen]
//! total_classes = 10
//! old_classes = 5
//!
//! [train]
//! epochs = 100
//! [train.objective]
//! lambda_entropy = 1.0
//!
//! [estimate]
//! k_max = 20
//! ```

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use protogcd::dataset::SyntheticConfig;
use protogcd::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub k_max: Option<usize>,
    pub probe_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub gen: Option<SyntheticConfig>,
    pub train: Option<TrainConfig>,
    pub estimate: EstimateSection,
    /// Whether `[gen]` names `old_classes` explicitly.
    #[serde(skip)]
    pub gen_sets_old: bool,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let gen_sets_old = table
            .get("gen")
            .and_then(|g| g.get("old_classes"))
            .is_some();
        let mut cfg: FileConfig = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.gen_sets_old = gen_sets_old;
        Ok(cfg)
    }

    pub fn train(&self) -> TrainConfig {
        let mut t = self.train.unwrap_or_default();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }
}
