//! Flat `key = value` configuration with flag overrides.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are ignored.
//! Keys are long flag names without the leading dashes (`resamples`, `alpha`,
//! `max-per-dialogue`, ...). A value given on the command line wins over the file,
//! and the file wins over the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::Failure;

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Settings {
    pub fn parse(text: &str, source: Option<PathBuf>) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().trim_start_matches("--").to_string();
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Failure::Usage(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Settings { values, source })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Settings::parse(&text, Some(p.to_path_buf()))
            }
        }
    }

    /// Flag value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                let origin = self.source.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                Failure::Usage(format!("{origin}: invalid value `{v}` for `{key}`: {e}"))
            }),
        }
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, Failure> {
        Ok(flag || self.pick_opt::<bool>(None, key)?.unwrap_or(false))
    }
}
