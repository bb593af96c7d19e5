//! Run configuration: a TOML or JSON file, command-line flags and dotted
//! `--set key=value` overrides, merged in that order.

use std::fs;
use std::path::Path;

use reddot_core::fusion::FusionConfig;
use reddot_core::model::{ModelConfig, Variant};
use reddot_core::protocol::{EvalMode, TrainConfig};
use reddot_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::args::{ProtocolArg, TrainArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives initialization, shuffling, dropout, bundling and fold assignment.
    pub seed: u64,
    pub m: usize,
    pub k: usize,
    pub model: ModelSection,
    pub train: TrainSection,
    pub protocol: ProtocolSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub layers: usize,
    pub ff_width: usize,
    pub heads: usize,
    pub dropout: f64,
    pub fusion: FusionConfig,
    pub inference_mask_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub kind: ProtocolArg,
    pub folds: usize,
    pub external_mode: EvalMode,
    /// Bundle the external split from top-ranked evidence only.
    pub external_retrieved_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            m: 1,
            k: 1,
            model: ModelSection::default(),
            train: TrainSection::default(),
            protocol: ProtocolSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(Variant::Dsl, 0);
        ModelSection {
            variant: m.variant,
            layers: m.layers,
            ff_width: m.ff_width,
            heads: m.heads,
            dropout: m.dropout,
            fusion: m.fusion,
            inference_mask_threshold: m.inference_mask_threshold,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection { lr: t.lr, max_epochs: t.max_epochs, patience: t.patience, batch_size: t.batch_size }
    }
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection { kind: ProtocolArg::Idv, folds: 3, external_mode: EvalMode::All, external_retrieved_only: false }
    }
}

impl RunConfig {
    pub fn model_config(&self, dim: usize) -> Result<ModelConfig> {
        let s = &self.model;
        let cfg = ModelConfig {
            variant: s.variant,
            dim,
            layers: s.layers,
            ff_width: s.ff_width,
            heads: s.heads,
            dropout: s.dropout,
            m: self.m,
            k: self.k,
            fusion: s.fusion.clone(),
            inference_mask_threshold: s.inference_mask_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            lr: t.lr,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {}", path.display(), e)))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let value = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?
    } else {
        let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        serde_json::to_value(table)?
    };
    if !value.is_object() {
        return Err(Error::Config(format!("{}: top level must be a table", path.display())));
    }
    Ok(value)
}

/// Parses an override value: JSON literals (numbers, booleans, arrays) are
/// taken as such, anything else as a string. Comma lists for `fusion`
/// become arrays.
fn parse_value(key: &str, raw: &str) -> Value {
    if key.ends_with("fusion") && !raw.trim_start().starts_with('[') {
        return Value::Array(raw.split(',').map(|s| Value::String(s.trim().to_owned())).collect());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Sets `value` at a dotted path, creating intermediate tables.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key '{}'", key)));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a table", key)))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("'{}' is not a table", key)))?
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{}' is not of the form key=value", assignment)))?;
    let key = key.trim();
    set_path(root, key, parse_value(key, raw))
}

/// Resolves the run configuration for `train`.
pub fn resolve(args: &TrainArgs) -> Result<RunConfig> {
    let mut root = match &args.config {
        Some(path) => read_file(path)?,
        None => Value::Object(Map::new()),
    };
    if let Some(v) = &args.variant {
        let variant: Variant = v.parse()?;
        set_path(&mut root, "model.variant", serde_json::to_value(variant)?)?;
    }
    if let Some(f) = &args.fusion {
        set_path(&mut root, "model.fusion", parse_value("fusion", f))?;
    }
    if let Some(m) = args.m {
        set_path(&mut root, "m", m.into())?;
    }
    if let Some(k) = args.k {
        set_path(&mut root, "k", k.into())?;
    }
    if let Some(p) = args.protocol {
        set_path(&mut root, "protocol.kind", serde_json::to_value(p)?)?;
    }
    if let Some(f) = args.folds {
        set_path(&mut root, "protocol.folds", f.into())?;
    }
    if let Some(s) = args.seed {
        set_path(&mut root, "seed", s.into())?;
    }
    for o in &args.overrides {
        apply_override(&mut root, o)?;
    }
    serde_json::from_value(root).map_err(|e| Error::Config(format!("run configuration: {}", e)))
}
