//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored, except that lines
//! starting with `#% ` carry a config embedded in an output file header.
//! Keys are stored sorted, so rendering is canonical.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::str::FromStr;

pub const EMBED_PREFIX: &str = "#% ";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.strip_prefix(EMBED_PREFIX) {
                Some(rest) => rest.trim(),
                None => raw.trim(),
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
            }
            cfg.entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    /// Recovers the config embedded in `#% ` header lines of an output file.
    pub fn from_embedded(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix(EMBED_PREFIX)).collect();
        Self::parse(&lines.join("\n"))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    /// Comma-separated list; an absent key or empty value gives no items.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    /// Overlays `other`; its values win.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_header(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{EMBED_PREFIX}{k} = {v}\n")).collect()
    }
}
