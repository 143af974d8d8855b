//! Plain `key = value` settings file. Command-line flags win over file
//! values, file values win over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, FileContext, Result};

/// Keys accepted in a settings file; each mirrors a long flag.
pub const KNOWN_KEYS: &[&str] = &[
    "threads",
    "seed",
    "count",
    "difficulty",
    "intent",
    "k",
    "max-iters",
    "kind",
    "epochs",
    "lr",
    "lambda",
    "batch-size",
    "cascade",
    "trunc",
    "eval-every",
    "n-infer",
    "steps",
    "vanilla-steps",
    "eta",
    "init",
    "top",
    "index",
    "paradigms",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { record: n + 1, reason: format!("expected 'key = value', got '{line}'") })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown setting '{key}' on line {}", n + 1)));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).in_file(path)?;
        Self::parse(&text).in_file(path)
    }

    /// The flag if given, else the file value, else `default`.
    pub fn pick<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(key, flag)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("setting '{key}' = '{v}': {e}"))))
            .transpose()
    }
}
