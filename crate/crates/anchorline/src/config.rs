use std::path::{Path, PathBuf};

use anchorline_core::anchor_sim::RelocModel;
use anchorline_core::executor::ExecutorConfig;
use anchorline_core::nav::Pose2D;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "ANCHORLINE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("no config given: pass --config or set {CONFIG_ENV}")]
    Missing,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_tick_interval_ms() -> u64 {
    20
}

fn default_robot_start() -> Pose2D {
    Pose2D::new(1.0, 1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default = "default_host")]
    pub host: String,
    /// 0 picks a free port.
    #[serde(default = "default_port")]
    pub port: u16,
    pub mission_dir: PathBuf,
    pub anchor_store: PathBuf,
    pub grid: PathBuf,
    #[serde(default)]
    pub reloc: RelocModel,
    #[serde(default)]
    pub executor: ExecutorConfig,
    /// Overrides the seeds of `reloc` and `executor`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_robot_start")]
    pub robot_start: Pose2D,
    /// Wall-clock pause between simulation ticks.
    #[serde(default = "default_tick_interval_ms")]
    pub tick_interval_ms: u64,
}

impl ApiConfig {
    pub fn new(mission_dir: PathBuf, anchor_store: PathBuf, grid: PathBuf) -> Self {
        Self {
            host: default_host(),
            port: default_port(),
            mission_dir,
            anchor_store,
            grid,
            reloc: RelocModel::default(),
            executor: ExecutorConfig::default(),
            seed: None,
            robot_start: default_robot_start(),
            tick_interval_ms: default_tick_interval_ms(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: ApiConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // Relative store paths are taken from the config file's directory.
        if let Some(base) = path.parent() {
            for p in [&mut cfg.mission_dir, &mut cfg.anchor_store, &mut cfg.grid] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// `explicit` if given, otherwise the file named by `ANCHORLINE_CONFIG`.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Err(ConfigError::Missing),
            },
        }
    }

    pub fn reloc_model(&self) -> RelocModel {
        RelocModel {
            seed: self.seed.unwrap_or(self.reloc.seed),
            ..self.reloc
        }
    }

    pub fn executor_config(&self) -> ExecutorConfig {
        ExecutorConfig {
            seed: self.seed.unwrap_or(self.executor.seed),
            ..self.executor
        }
    }
}
