//! Pipeline configuration: defaults, a simple `key = value` config file,
//! and CLI-flag overrides layered on top (flags > file > defaults).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::backend::{self, BackendKind};
use crate::error::{Error, Result};
use crate::harness::{default_matrices, MatrixSize};
use crate::measure::AggregateStrategy;
use crate::sweep::{canonical_blocks, BlockConfig};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub repo_list: Option<PathBuf>,
    pub compiler_template: String,
    pub backend: BackendKind,
    pub seed: u64,
    pub timeout_s: f64,
    pub repeats: u32,
    pub strategy: AggregateStrategy,
    pub matrices: Vec<MatrixSize>,
    pub blocks: Vec<BlockConfig>,
    pub workers: usize,
    pub device_ids: Vec<u32>,
    pub max_fix_attempts: u32,
    pub timestamps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_root: PathBuf::from("."),
            repo_list: None,
            compiler_template: backend::DEFAULT_COMPILER_TEMPLATE.to_string(),
            backend: BackendKind::Simulated,
            seed: 0,
            timeout_s: backend::DEFAULT_TIMEOUT_S,
            repeats: 10,
            strategy: AggregateStrategy::Median,
            matrices: default_matrices(),
            blocks: canonical_blocks(),
            workers: 8,
            device_ids: vec![0],
            max_fix_attempts: backend::DEFAULT_MAX_FIX_ATTEMPTS,
            timestamps: true,
        }
    }
}

fn parse_list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

/// Parse "240x240,496x496" (or space-separated) into matrix sizes.
pub fn parse_matrices_list(value: &str) -> Result<Vec<MatrixSize>> {
    value
        .split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(MatrixSize::parse)
        .collect()
}

/// Parse "64x1x1,8x8x1" (or space-separated) into block shapes.
pub fn parse_blocks_list(value: &str) -> Result<Vec<BlockConfig>> {
    value
        .split([',', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(BlockConfig::parse)
        .collect()
}

impl PipelineConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    /// Parse a config file of `key = value` lines. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = |what: &str| Error::Config(format!("bad {what} `{value}`"));
        match key {
            "corpus_root" => self.corpus_root = PathBuf::from(value),
            "repo_list" => self.repo_list = Some(PathBuf::from(value)),
            "compiler_template" => self.compiler_template = value.to_string(),
            "backend" => {
                self.backend = match value {
                    "real" => BackendKind::Real,
                    "simulated" => BackendKind::Simulated,
                    _ => return Err(Error::Config(format!("unknown backend `{value}`"))),
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad_num("seed"))?,
            "timeout_s" => {
                self.timeout_s = value.parse().map_err(|_| bad_num("timeout_s"))?;
                if self.timeout_s <= 0.0 {
                    return Err(Error::Config("timeout_s must be positive".into()));
                }
            }
            "repeats" => self.repeats = value.parse().map_err(|_| bad_num("repeats"))?,
            "strategy" => self.strategy = AggregateStrategy::parse(value)?,
            "matrices" => self.matrices = parse_matrices_list(value)?,
            "blocks" => self.blocks = parse_blocks_list(value)?,
            "workers" => self.workers = value.parse().map_err(|_| bad_num("workers"))?,
            "device_ids" => {
                self.device_ids = parse_list(value, |s| {
                    s.parse().map_err(|_| Error::Config(format!("bad device id `{s}`")))
                })?
            }
            "max_fix_attempts" => {
                self.max_fix_attempts = value.parse().map_err(|_| bad_num("max_fix_attempts"))?
            }
            "timestamps" => {
                self.timestamps = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(Error::Config(format!("bad timestamps flag `{value}`"))),
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}
