//! Flat `key = value` configuration files. Blank lines and lines starting
//! with `#` are ignored; keys are the long flag names of a subcommand, with
//! `-` or `_` accepted interchangeably.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::formats::read_text;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    path: String,
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key = value"))?;
            let key = normalize(key);
            if key.is_empty() {
                return Err(Error::parse(path, i + 1, "empty key"));
            }
            if values
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::parse(path, i + 1, format!("key {key:?} set twice")));
            }
        }
        Ok(Self {
            path: path.display().to_string(),
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Usage(format!(
                "{}: unknown key {k:?} (known: {})",
                self.path,
                known.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// The flag value when given, else the parsed config value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|e| {
                    Error::Usage(format!("{}: invalid value for {key}: {e}", self.path))
                })
            })
            .transpose()
    }
}
