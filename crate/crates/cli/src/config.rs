use std::path::Path;

use chx_core::relprop::Stabilizer;
use chx_core::{DetectorConfig, LrpRules, Mitigation, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every command reads the same file; each uses the sections it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub mitigation: Mitigation,
    /// Dataset category written by `synth` and read by `fit`/`score`.
    pub category: String,
    /// Categories of an external dataset for `shift --data`.
    pub categories: Vec<String>,
    /// Synthetic category seeds for `shift`; each seed is one category.
    pub seeds: Vec<u64>,
    pub bins: usize,
    pub stabilizer: Stabilizer,
    pub rules: LrpRules,
    pub patch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            detector: DetectorConfig::default(),
            mitigation: Mitigation::None,
            category: "synth".into(),
            categories: Vec::new(),
            seeds: (0..5).collect(),
            bins: 19,
            stabilizer: Stabilizer::default(),
            rules: LrpRules::default(),
            patch: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(chx_core::Error::from)?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.synth.validate()?;
        if cfg.bins == 0 || cfg.patch == 0 || cfg.seeds.is_empty() {
            return Err(CliError::Config("bins, patch and seeds must be non-empty".into()));
        }
        Ok(cfg)
    }
}
