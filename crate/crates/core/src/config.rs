//! Pipeline configuration: TOML file, named presets and dotted overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file, the preset,
//! `--set path=value` overrides, then an explicit seed.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discovery::DiscoveryConfig;
use crate::embedding::EmbedConfig;
use crate::entities::EntityConfig;
use crate::graph::DateRange;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset {0:?} (known: french-election, philippine, russophobia)")]
    UnknownPreset(String),
    #[error("bad override {0:?}: expected path=value")]
    Override(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub posts: PathBuf,
    /// Physical-event counts; without it physical series are all zero.
    pub events: Option<PathBuf>,
    /// Inclusive first day of the analysed range.
    pub start: Option<NaiveDate>,
    /// Exclusive last day.
    pub end: Option<NaiveDate>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { posts: PathBuf::from("posts.jsonl"), events: None, start: None, end: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub length_days: u32,
    pub shift_days: u32,
    pub lag_days: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length_days: 20, shift_days: 1, lag_days: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySettings {
    pub min_correlation: f64,
    pub min_overlap: usize,
    pub use_absolute: bool,
}

impl Default for DiscoverySettings {
    fn default() -> Self {
        Self { min_correlation: 0.7, min_overlap: 8, use_absolute: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub enabled: bool,
    pub add_threshold: f64,
    pub remove_threshold: f64,
    pub candidate_budget: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self { enabled: true, add_threshold: 0.95, remove_threshold: 0.02, candidate_budget: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Root of the run store.
    pub store: PathBuf,
    pub input: InputConfig,
    pub windows: WindowConfig,
    pub discovery: DiscoverySettings,
    pub cleaning: CleaningConfig,
    pub embed: EmbedConfig,
    pub entities: EntityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            store: PathBuf::from("store"),
            input: InputConfig::default(),
            windows: WindowConfig::default(),
            discovery: DiscoverySettings::default(),
            cleaning: CleaningConfig::default(),
            embed: EmbedConfig::default(),
            entities: EntityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub length_days: u32,
    pub shift_days: u32,
    pub lag_days: u32,
    pub min_correlation: f64,
}

pub const PRESETS: [Preset; 3] = [
    Preset { name: "french-election", length_days: 20, shift_days: 1, lag_days: 5, min_correlation: 0.7 },
    Preset { name: "philippine", length_days: 20, shift_days: 2, lag_days: 5, min_correlation: 0.5 },
    Preset { name: "russophobia", length_days: 20, shift_days: 2, lag_days: 5, min_correlation: 0.4 },
];

pub fn preset(name: &str) -> Option<Preset> {
    let name = if name == "philippines" { "philippine" } else { name };
    PRESETS.iter().copied().find(|p| p.name == name)
}

/// Sets `path` (dot separated) inside `root`, creating tables on the way.
fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(path.to_string()));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| invalid(path, "parent is not a table"))?;
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| invalid(path, "parent is not a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Field path of a serde error message such as "unknown field `x`".
fn parse_error(e: toml::de::Error) -> ConfigError {
    ConfigError::Parse(e.message().to_string())
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    /// `path=value` strings, applied in order.
    pub set: Vec<String>,
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::resolve(Some(text), &Overrides::default())
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::resolve(Some(&text), overrides)?;
        // Relative input and store paths are relative to the config file.
        if let Some(dir) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            rebase(&mut cfg.input.posts);
            if let Some(e) = cfg.input.events.as_mut() {
                rebase(e);
            }
            rebase(&mut cfg.store);
        }
        Ok(cfg)
    }

    /// Defaults, then `file`, then the overrides; validated.
    pub fn resolve(file: Option<&str>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut value = toml::Value::try_from(PipelineConfig::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(text) = file {
            let parsed: toml::Table = text.parse().map_err(parse_error)?;
            // Check the file alone so unknown keys are reported even when
            // they would be shadowed by a later override.
            let _: PipelineConfig = toml::Value::Table(parsed.clone()).try_into().map_err(parse_error)?;
            merge(&mut value, toml::Value::Table(parsed));
        }
        if let Some(name) = &overrides.preset {
            let p = preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.clone()))?;
            set_path(&mut value, "windows.length_days", toml::Value::Integer(p.length_days.into()))?;
            set_path(&mut value, "windows.shift_days", toml::Value::Integer(p.shift_days.into()))?;
            set_path(&mut value, "windows.lag_days", toml::Value::Integer(p.lag_days.into()))?;
            set_path(&mut value, "discovery.min_correlation", toml::Value::Float(p.min_correlation))?;
        }
        for item in &overrides.set {
            let (path, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
            set_path(&mut value, path.trim(), override_value(raw.trim()))?;
        }
        if let Some(seed) = overrides.seed {
            let seed = i64::try_from(seed).map_err(|_| invalid("seed", "must fit in a signed 64-bit integer"))?;
            set_path(&mut value, "seed", toml::Value::Integer(seed))?;
        }
        let cfg: PipelineConfig = value.try_into().map_err(parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.windows;
        if w.shift_days < 1 {
            return Err(invalid("windows.shift_days", "must be at least 1"));
        }
        if w.length_days < w.shift_days {
            return Err(invalid("windows.length_days", format!("must be >= shift_days ({})", w.shift_days)));
        }
        if w.lag_days < w.shift_days {
            return Err(invalid("windows.lag_days", format!("must be >= shift_days ({})", w.shift_days)));
        }
        if let (Some(s), Some(e)) = (self.input.start, self.input.end) {
            if e <= s {
                return Err(invalid("input.end", "must be after input.start"));
            }
        }
        let d = &self.discovery;
        if !(d.min_correlation > 0.0 && d.min_correlation <= 1.0) {
            return Err(invalid("discovery.min_correlation", format!("must be in (0, 1], got {}", d.min_correlation)));
        }
        if d.min_overlap < 2 {
            return Err(invalid("discovery.min_overlap", "must be at least 2"));
        }
        let c = &self.cleaning;
        for (field, v) in [("cleaning.add_threshold", c.add_threshold), ("cleaning.remove_threshold", c.remove_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, format!("must be in [0, 1], got {v}")));
            }
        }
        if c.candidate_budget == 0 {
            return Err(invalid("cleaning.candidate_budget", "must be positive"));
        }
        if self.embed.epochs == 0 {
            return Err(invalid("embed.epochs", "must be positive"));
        }
        if self.embed.latent_dim > 4 {
            return Err(invalid("embed.latent_dim", "must be at most 4"));
        }
        if let Err(e) = self.embed.validate() {
            let message = match e {
                crate::embedding::EmbedError::Config(m) => m,
                other => other.to_string(),
            };
            let field = message.split_whitespace().next().unwrap_or("").to_string();
            return Err(invalid(&format!("embed.{field}"), message));
        }
        let en = &self.entities;
        if en.event_types.is_empty() {
            return Err(invalid("entities.event_types", "must list at least one event type"));
        }
        if en.min_community_size == 0 {
            return Err(invalid("entities.min_community_size", "must be positive"));
        }
        if en.max_iters == 0 {
            return Err(invalid("entities.max_iters", "must be positive"));
        }
        Ok(())
    }

    /// `L = floor(lag_days / shift_days)` window steps.
    pub fn max_lag_windows(&self) -> usize {
        (self.windows.lag_days / self.windows.shift_days.max(1)) as usize
    }

    pub fn discovery_config(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            max_lag_windows: self.max_lag_windows(),
            min_correlation: self.discovery.min_correlation,
            min_overlap: self.discovery.min_overlap,
            use_absolute: self.discovery.use_absolute,
        }
    }

    /// The embedding config with the pipeline seed.
    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig { seed: self.seed, ..self.embed.clone() }
    }

    pub fn date_range(&self) -> Option<DateRange> {
        match (self.input.start, self.input.end) {
            (Some(start), Some(end)) => Some(DateRange { start, end }),
            _ => None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
