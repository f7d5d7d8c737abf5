//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{NetConfig, Phase, SamplingConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Training images; relative paths resolve against the config file.
    pub image_dir: Option<PathBuf>,
    pub block_size: usize,
    pub subrate: f32,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_dir: None,
            block_size: 16,
            subrate: 0.1,
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "image_dir",
    "block_size",
    "subrate",
    "enhance1_depth",
    "enhance1_width",
    "mwcnn_levels",
    "mwcnn_widths",
    "mwcnn_convs_per_level",
    "phases",
    "epochs_per_lr",
    "lr_ladder",
    "batch_size",
    "seed",
    "patch_size",
    "patches_per_image",
    "holdout_fraction",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let key = key.trim();
            if KEYS.contains(&key) && !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            cfg.set(key, value.trim(), base_dir)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    /// Assigns one key. Relative `image_dir` values resolve against `base_dir`.
    pub fn set(&mut self, key: &str, value: &str, base_dir: Option<&Path>) -> Result<()> {
        let t = &mut self.train;
        match key {
            "image_dir" => {
                let p = PathBuf::from(value);
                self.image_dir = Some(match base_dir {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p,
                });
            }
            "block_size" => self.block_size = parse(key, value)?,
            "subrate" => self.subrate = parse(key, value)?,
            "enhance1_depth" => self.net.enhance1_depth = parse(key, value)?,
            "enhance1_width" => self.net.enhance1_width = parse(key, value)?,
            "mwcnn_levels" => self.net.mwcnn_levels = parse(key, value)?,
            "mwcnn_widths" => self.net.mwcnn_widths = parse_list(key, value)?,
            "mwcnn_convs_per_level" => self.net.mwcnn_convs_per_level = parse(key, value)?,
            "phases" => {
                t.phases = parse_list::<u32>(key, value)?
                    .into_iter()
                    .map(Phase::from_number)
                    .collect::<Result<_>>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "epochs_per_lr" => t.epochs_per_lr = parse(key, value)?,
            "lr_ladder" => t.lr_ladder = parse_list(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "patch_size" => t.patch_size = parse(key, value)?,
            "patches_per_image" => t.patches_per_image = parse(key, value)?,
            "holdout_fraction" => t.holdout_fraction = parse(key, value)?,
            "adam_beta1" => t.beta1 = parse(key, value)?,
            "adam_beta2" => t.beta2 = parse(key, value)?,
            "adam_epsilon" => t.epsilon = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse_str(&text, path.parent())
    }

    pub fn sampling(&self) -> Result<SamplingConfig> {
        SamplingConfig::new(self.block_size, self.subrate).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section; all failures map to [`Error::Config`].
    pub fn validate(&self) -> Result<SamplingConfig> {
        let sampling = self.sampling()?;
        self.net.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate(&sampling, &self.net)?;
        Ok(sampling)
    }
}
