//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! flag names, with `-` or `_` accepted interchangeably.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    /// Normalized key -> (line number, raw value).
    entries: BTreeMap<String, (usize, String)>,
    source: String,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{source}:{}: expected `key = value`, got `{line}`", i + 1))
            })?;
            let key = normalize(key);
            if key.is_empty() {
                return Err(Error::Config(format!("{source}:{}: empty key", i + 1)));
            }
            if let Some((first, _)) = entries.insert(key.clone(), (i + 1, value.trim().to_string())) {
                return Err(Error::Config(format!(
                    "{source}:{}: key `{key}` already set on line {first}",
                    i + 1
                )));
            }
        }
        Ok(ConfigFile {
            entries,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{line}: unknown key `{key}` (allowed: {})",
                    self.source,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// The flag value if given, else the parsed config value.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.entries.get(&normalize(key)) {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::Config(format!(
                    "{}:{line}: key `{key}`: invalid value `{raw}`: {e}",
                    self.source
                ))
            }),
        }
    }

    /// A boolean switch: set by the flag or by a `true`/`false` entry.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.resolve::<bool>(None, key)?.unwrap_or(false))
    }

    /// Comma-separated list value.
    pub fn list(&self, flag: Vec<String>, key: &str) -> Result<Vec<String>> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        Ok(self
            .resolve::<String>(None, key)?
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .unwrap_or_default())
    }
}
