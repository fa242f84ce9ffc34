//! Flat `key = value` configuration files and flag precedence.
//!
//! Lines look like `epochs = 40` or `model.d_model = 64`; `#` starts a
//! comment. Bare keys mirror the command-line flags (`seed`, `strategy`,
//! `k`, `budget`, `data`, `tables`, `out`, ...). Dotted keys address fields
//! of the nested configurations: `train.*`, `model.*`, `augment.*`,
//! `synth.*` and `bench.*`. A flag always wins over the file, and the file
//! wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("config line {}: expected `key = value`", i + 1)));
            };
            let key = key.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Flag value if given, else the file's value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.resolve_opt(flag, key)?.unwrap_or(default))
    }

    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
            .map(|v| v.parse().map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))))
            .transpose()
    }

    /// Applies every `prefix.field` entry to `base` through its serde
    /// representation. Unknown fields are usage errors.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, prefix: &str, base: T) -> Result<T, CliError> {
        let mut value = serde_json::to_value(base).expect("configs serialize");
        let Value::Object(map) = &mut value else {
            unreachable!("configs are structs")
        };
        let dotted = format!("{prefix}.");
        for (key, raw) in &self.entries {
            let Some(field) = key.strip_prefix(&dotted) else { continue };
            if !map.contains_key(field) {
                return Err(CliError::Usage(format!("unknown config key `{key}`")));
            }
            map.insert(field.to_string(), scalar(raw));
        }
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config section `{prefix}`: {e}")))
    }

    /// Rejects keys that no section or flag understands.
    pub fn check_keys(&self, flags: &[&str], sections: &[&str]) -> Result<(), CliError> {
        for key in self.keys() {
            let known = match key.split_once('.') {
                Some((section, _)) => sections.contains(&section),
                None => flags.contains(&key),
            };
            if !known {
                return Err(CliError::Usage(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }
}

/// Interprets a config value as JSON when it parses, else as a string, so
/// `true`, `3`, `0.5`, `null` and `"rel:3"` all work.
fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
