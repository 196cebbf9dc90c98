//! Run configuration: a single JSON file, with environment-variable
//! overrides for scalar fields and command-line flags taking final
//! precedence.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fsod_core::eval::EvalConfig;
use serde::{Deserialize, Serialize};

/// Environment variables recognized as overrides of scalar config fields.
pub const ENV_PORT: &str = "FSOD_PORT";
pub const ENV_OUT_DIR: &str = "FSOD_OUT_DIR";
pub const ENV_MAX_BODY_BYTES: &str = "FSOD_MAX_BODY_BYTES";
pub const ENV_TOKEN: &str = "FSOD_TOKEN";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub cohort_config: Option<PathBuf>,
    #[serde(default)]
    pub k: Vec<u32>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    pub out_dir: Option<PathBuf>,
    pub port: Option<u16>,
    pub leaderboard_store: Option<PathBuf>,
    pub max_body_bytes: Option<usize>,
    /// Shared token required in the `x-api-token` header when set.
    pub token: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(ENV_PORT) {
            if let Ok(p) = v.parse() {
                self.port = Some(p);
            }
        }
        if let Ok(v) = std::env::var(ENV_OUT_DIR) {
            self.out_dir = Some(PathBuf::from(v));
        }
        if let Ok(v) = std::env::var(ENV_MAX_BODY_BYTES) {
            if let Ok(n) = v.parse() {
                self.max_body_bytes = Some(n);
            }
        }
        if let Ok(v) = std::env::var(ENV_TOKEN) {
            self.token = Some(v);
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        self.eval.clone().unwrap_or_default()
    }
}
