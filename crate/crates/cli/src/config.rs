//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. Keys that are absent keep their defaults.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use scsc_core::data::default_wald_sigma;
use scsc_core::train::TrainConfig;
use scsc_core::ModelConfig;

use crate::error::{CliError, CliResult};

pub const KEYS: [&str; 13] = [
    "k", "s", "T", "b", "B", "ratio", "epochs", "lr", "batch", "seed", "sigma", "lambda", "rounds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub filters: usize,
    pub kernel_size: usize,
    pub blocks: usize,
    pub pan_bands: usize,
    pub ms_bands: usize,
    pub ratio: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub lambda: f64,
    pub rounds: usize,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig::default();
        RunConfig {
            filters: model.filters,
            kernel_size: model.kernel_size,
            blocks: model.blocks,
            pan_bands: model.pan_bands,
            ms_bands: model.ms_bands,
            ratio: train.ratio,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            seed: train.seed,
            sigma: None,
            lambda: 0.01,
            rounds: 1,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str, line: usize) -> CliResult<T> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("line {}: bad value {:?} for {}", line, raw, key)))
}

impl FromStr for RunConfig {
    type Err = CliError;

    fn from_str(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", line)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Usage(format!("line {}: unknown key {:?}", line, key)));
            }
            if !cfg.explicit.insert(key.to_string()) {
                return Err(CliError::Usage(format!("line {}: key {:?} given twice", line, key)));
            }
            match key {
                "k" => cfg.filters = parse_value(key, value, line)?,
                "s" => cfg.kernel_size = parse_value(key, value, line)?,
                "T" => cfg.blocks = parse_value(key, value, line)?,
                "b" => cfg.pan_bands = parse_value(key, value, line)?,
                "B" => cfg.ms_bands = parse_value(key, value, line)?,
                "ratio" => cfg.ratio = parse_value(key, value, line)?,
                "epochs" => cfg.epochs = parse_value(key, value, line)?,
                "lr" => cfg.learning_rate = parse_value(key, value, line)?,
                "batch" => cfg.batch_size = parse_value(key, value, line)?,
                "seed" => cfg.seed = parse_value(key, value, line)?,
                "sigma" => cfg.sigma = Some(parse_value(key, value, line)?),
                "lambda" => cfg.lambda = parse_value(key, value, line)?,
                "rounds" => cfg.rounds = parse_value(key, value, line)?,
                _ => unreachable!(),
            }
        }
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        fs::read_to_string(path)
            .map_err(|e| CliError::io(path, e))?
            .parse()
    }

    /// Defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            pan_bands: self.pan_bands,
            ms_bands: self.ms_bands,
            filters: self.filters,
            kernel_size: self.kernel_size,
            blocks: self.blocks,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            ratio: self.ratio,
            ..TrainConfig::default()
        }
    }

    pub fn wald_sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| default_wald_sigma(self.ratio))
    }
}
