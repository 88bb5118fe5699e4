//! Loading of JSON configuration files.
//!
//! Each component defines its own configuration struct and implements
//! [`Validate`] for it; [`load_config`] then takes care of the shared rules:
//! required keys are reported by name, unknown keys are logged and ignored,
//! defaults are applied by serde and range checks run last.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("`{key}` out of range: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn out_of_range(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::OutOfRange {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

pub trait Validate: Serialize + DeserializeOwned {
    /// Every top-level key the struct understands.
    const KNOWN_KEYS: &'static [&'static str];
    /// Keys without a default.
    const REQUIRED_KEYS: &'static [&'static str];

    /// Fills derived defaults (values that depend on other keys).
    fn resolve(&mut self) {}

    fn validate(&self) -> Result<(), ConfigError>;
}

pub fn load_config<T: Validate>(path: impl AsRef<Path>) -> Result<T, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config<T: Validate>(text: &str) -> Result<T, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ConfigError::Parse("top level must be a JSON object".into()))?;
    for key in T::REQUIRED_KEYS {
        if !obj.contains_key(*key) {
            return Err(ConfigError::MissingKey((*key).to_string()));
        }
    }
    for key in obj.keys() {
        if !T::KNOWN_KEYS.contains(&key.as_str()) {
            log::warn!("ignoring unknown config key `{key}`");
        }
    }
    let mut cfg: T = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a configuration back to pretty JSON.
pub fn to_json<T: Validate>(cfg: &T) -> String {
    serde_json::to_string_pretty(cfg).expect("config structs always serialize")
}
