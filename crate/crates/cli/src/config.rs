use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use lusb_core::detect::DetectConfig;
use lusb_core::eval::EvalConfig;
use lusb_core::phantom::PhantomConfig;
use lusb_core::pretrain::PretrainConfig;

use crate::CliError;

/// Encoder weights a fine-tuning run starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// The checkpoint written by `pretrain` in the run directory.
    #[default]
    Pretrained,
    /// Random initialization.
    Scratch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub init: InitMode,
}

/// Every setting of every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of phantom generation and of the train/eval split.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub phantom: PhantomConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            phantom: PhantomConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

const SECTIONS: [&str; 5] = ["phantom", "pretrain", "finetune", "detect", "eval"];

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Table path of `key`: `section.field` as given, a top-level field as is,
/// otherwise the single section holding that field.
fn resolve_key(root: &Table, key: &str) -> Result<Vec<String>, CliError> {
    if let Some((section, field)) = key.split_once('.') {
        let ok = root.get(section).and_then(Value::as_table).is_some_and(|t| t.contains_key(field));
        return if ok {
            Ok(vec![section.to_string(), field.to_string()])
        } else {
            Err(config_err(format!("unknown key {key}")))
        };
    }
    if root.get(key).is_some_and(|v| !v.is_table()) {
        return Ok(vec![key.to_string()]);
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| root.get(*s).and_then(Value::as_table).is_some_and(|t| t.contains_key(key)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(vec![one.to_string(), key.to_string()]),
        [] => Err(config_err(format!("unknown key {key}"))),
        many => Err(config_err(format!(
            "key {key} is ambiguous, qualify it as one of {}",
            many.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), then applies `(key, value)`
    /// overrides in order and validates every section.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                let cfg: RunConfig = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                cfg
            }
            None => RunConfig::default(),
        };
        let mut root = Table::try_from(&base).map_err(config_err)?;
        for (key, raw) in overrides {
            let path = resolve_key(&root, key)?;
            let value = parse_value(raw);
            match path.as_slice() {
                [k] => root.insert(k.clone(), value),
                [s, k] => root.get_mut(s).and_then(Value::as_table_mut).expect("resolved section").insert(k.clone(), value),
                _ => unreachable!("keys have at most two parts"),
            };
        }
        let cfg: RunConfig = Value::Table(root).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate().map_err(config_err)?;
        self.pretrain.validate().map_err(config_err)?;
        self.detect.validate().map_err(config_err)?;
        self.eval.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved config text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
