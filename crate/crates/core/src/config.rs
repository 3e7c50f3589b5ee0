//! `key = value` configuration files with `#` comments.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed entries, consumed key by key; [`ConfigFile::finish`] rejects any
/// key nobody asked for.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    entries: Vec<(usize, String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(i + 1, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) || v.is_empty() {
                return Err(Error::malformed(i + 1, "expected `key = value`"));
            }
            if let Some((first, ..)) = entries.iter().find(|(_, key, _)| key == k) {
                return Err(Error::malformed(
                    i + 1,
                    format!("key `{k}` already set on line {first}"),
                ));
            }
            entries.push((i + 1, k.to_string(), v.to_string()));
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(pos) = self.entries.iter().position(|(_, k, _)| k == key) else {
            return Ok(None);
        };
        let (line, _, value) = self.entries.remove(pos);
        value
            .parse()
            .map(Some)
            .map_err(|e| Error::malformed(line, format!("`{key}`: {e}")))
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list under `key`.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.take::<String>(key)? else {
            return Ok(None);
        };
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((line, key, _)) => Err(Error::malformed(*line, format!("unknown key `{key}`"))),
        }
    }
}
