//! Resolution of defaults, config files and flags into one flat config.

use crate::Failure;
use excursion_core::config::{KvConfig, EMBED_PREFIX};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Reads a config file. Output files written by an earlier run are accepted
/// too: only their embedded header lines are used.
pub fn load(path: &Path) -> Result<KvConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(path.display(), e))?;
    let parsed = if text.lines().any(|l| l.starts_with(EMBED_PREFIX)) {
        KvConfig::from_embedded(&text)
    } else {
        KvConfig::parse(&text)
    };
    parsed.map_err(|e| Failure::input(path.display(), e))
}

/// Defaults, then the config file, then flags.
pub fn layered(defaults: &[(&str, &str)], file: Option<&Path>, flags: &KvConfig) -> Result<KvConfig, Failure> {
    let mut cfg = KvConfig::new();
    for (k, v) in defaults {
        cfg.set(k, v);
    }
    if let Some(path) = file {
        let loaded = load(path)?;
        if let Some(unknown) = loaded.keys().find(|k| !defaults.iter().any(|(d, _)| d == k) && !flags.contains(k)) {
            return Err(Failure::Input(format!("{}: unknown key `{unknown}`", path.display())));
        }
        cfg.merge(&loaded);
    }
    cfg.merge(flags);
    Ok(cfg)
}

pub fn set_opt<T: Display>(cfg: &mut KvConfig, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        cfg.set(key, v);
    }
}

pub fn set_list<T: Display>(cfg: &mut KvConfig, key: &str, values: &[T]) {
    if !values.is_empty() {
        let parts: Vec<String> = values.iter().map(ToString::to_string).collect();
        cfg.set(key, parts.join(", "));
    }
}

pub fn set_flag(cfg: &mut KvConfig, key: &str, on: bool) {
    if on {
        cfg.set(key, true);
    }
}

pub fn value<T: FromStr>(cfg: &KvConfig, key: &str) -> Result<T, Failure> {
    cfg.parse_value(key)
        .map_err(|e| Failure::from_core("config", e))?
        .ok_or_else(|| Failure::Input(format!("missing required setting `{key}`")))
}

/// Parses each list item with `FromStr`.
pub fn parsed_list<T>(cfg: &KvConfig, key: &str) -> Result<Vec<T>, Failure>
where
    T: FromStr,
    T::Err: Display,
{
    cfg.list(key)
        .iter()
        .map(|s| s.parse::<T>().map_err(|e| Failure::Input(format!("`{key}`: {e}"))))
        .collect()
}
