//! One flat key=value file configures every command.
//!
//! Model keys reuse the checkpoint vocabulary (`base_channels`, `cwa.*`,
//! `diffusion.*`); optimizer keys carry a `train.` prefix and degradation
//! keys a `degrade.` prefix. Blank lines and `#` comments are skipped,
//! later lines win, and command-line flags override the file.

use std::fs;
use std::path::Path;

use llcaps::data::DegradeConfig;
use llcaps::training::TrainConfig;
use llcaps::{Error, ModelConfig, Result};

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degrade: DegradeConfig,
}

impl CliConfig {
    pub fn new(model: ModelConfig) -> Self {
        CliConfig {
            model,
            train: TrainConfig::default(),
            degrade: DegradeConfig::default(),
        }
    }

    /// Applies an optional config file on top of the defaults.
    pub fn apply_file(&mut self, path: Option<&Path>) -> Result<()> {
        let Some(path) = path else { return Ok(()) };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {line:?} is not key=value"))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("train.") {
            apply_train(&mut self.train, k, value)
        } else if let Some(k) = key.strip_prefix("degrade.") {
            apply_degrade(&mut self.degrade, k, value)
        } else {
            self.model.apply_kv(key, value)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.degrade.validate()
    }
}

fn apply_train(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "beta1" => cfg.beta1 = parse(key, value)?,
        "beta2" => cfg.beta2 = parse(key, value)?,
        "adam_eps" => cfg.adam_eps = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "charbonnier_eps" => cfg.charbonnier_eps = parse(key, value)?,
        "grad_clip" => {
            cfg.grad_clip = if value == "none" {
                None
            } else {
                Some(parse(key, value)?)
            }
        }
        _ => return unknown("train", key),
    }
    Ok(())
}

fn apply_degrade(cfg: &mut DegradeConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "gamma_min" => cfg.gamma_min = parse(key, value)?,
        "gamma_max" => cfg.gamma_max = parse(key, value)?,
        "s_min" => cfg.s_min = parse(key, value)?,
        "s_max" => cfg.s_max = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        _ => return unknown("degrade", key),
    }
    Ok(())
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value {value:?} for {key}")))
}

fn unknown(section: &str, key: &str) -> Result<()> {
    Err(Error::InvalidArgument(format!(
        "unknown config key {section}.{key}"
    )))
}
