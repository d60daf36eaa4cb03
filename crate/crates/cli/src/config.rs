//! Flat `key = value` configuration with `[section]` headers. CLI flags
//! override file values; every run writes back a fully resolved echo so it
//! can be reproduced exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Keys actually consulted, with their resolved values (for the echo).
    resolved: std::cell::RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`", idx + 1);
            };
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            values.insert(full, value.trim().to_string());
        }
        Ok(Self { values, resolved: Default::default() })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        let v = self.values.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.resolved.borrow_mut().insert(key.to_string(), v.clone());
        v
    }

    pub fn get<T: std::str::FromStr + ToString>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            Some(raw) => {
                let v: T = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("config key `{key}`: malformed value `{raw}`"))?;
                self.resolved.borrow_mut().insert(key.to_string(), v.to_string());
                Ok(v)
            }
            None => {
                self.resolved
                    .borrow_mut()
                    .insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Fully resolved `key = value` listing (defaults included), grouped by
    /// section, suitable for re-use as a config file.
    pub fn echo(&self) -> String {
        let resolved = self.resolved.borrow();
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in resolved.iter() {
            let (sec, name) = key.rsplit_once('.').unwrap_or(("", key));
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                section = sec.to_string();
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }
}
