use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Resolves each setting from its flag, then the config file, then the
/// default, and records the effective value for the run manifest.
#[derive(Debug, Default)]
pub struct Settings {
    file: toml::Table,
    effective: BTreeMap<String, serde_json::Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        if let Some((key, _)) = file.iter().find(|(_, v)| v.is_table()) {
            anyhow::bail!("config must be flat key-value pairs; `{key}` is a table");
        }
        Ok(Self {
            file,
            effective: BTreeMap::new(),
        })
    }

    /// Config keys are flag names with `-` replaced by `_`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: DeserializeOwned + Serialize,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(v) => v
                    .clone()
                    .try_into()
                    .with_context(|| format!("config key `{key}` has the wrong type"))?,
                None => default,
            },
        };
        self.record(key, &value)?;
        Ok(value)
    }

    /// Like `get` for settings without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: DeserializeOwned + Serialize,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(v) => Some(
                    v.clone()
                        .try_into()
                        .with_context(|| format!("config key `{key}` has the wrong type"))?,
                ),
                None => None,
            },
        };
        self.record(key, &value)?;
        Ok(value)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: DeserializeOwned + Serialize,
    {
        self.get_opt(key, flag)?
            .with_context(|| format!("missing required setting `--{}`", key.replace('_', "-")))
    }

    /// Boolean switches: a set flag wins, otherwise the config decides.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.get(key, flag.then_some(true), false)
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.effective.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn effective(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.effective
    }
}
