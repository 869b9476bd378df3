//! `key = value` text files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    source: String,
    entries: Vec<(String, String)>,
    lines: HashMap<String, usize>,
}

impl KvFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KvFile {
            source: source.to_owned(),
            ..Default::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: source.to_owned(),
                line,
                reason,
            };
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{trimmed}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.chars().any(char::is_whitespace) {
                return Err(err(format!("invalid key `{k}`")));
            }
            if let Some(first) = kv.lines.insert(k.to_owned(), line) {
                return Err(err(format!("key `{k}` already set on line {first}")));
            }
            kv.entries.push((k.to_owned(), v.to_owned()));
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn from_pairs<K: Into<String>, V: Display>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        let mut kv = KvFile {
            source: "<memory>".into(),
            ..Default::default()
        };
        for (k, v) in pairs {
            kv.set(k, v);
        }
        kv
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => {
                self.lines.insert(key.clone(), 0);
                self.entries.push((key, value));
            }
        }
    }

    /// Copies every entry of `other` over this file.
    pub fn merge(&mut self, other: &KvFile) {
        for (k, v) in &other.entries {
            self.set(k.clone(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses `key` if present.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.get(key) else { return Ok(None) };
        raw.parse().map(Some).map_err(|e: T::Err| Error::Parse {
            path: self.source.clone(),
            line: self.lines.get(key).copied().unwrap_or(0),
            reason: format!("`{key}`: cannot parse `{raw}`: {e}"),
        })
    }

    /// Parses a comma-separated list under `key` if present.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.get(key) else { return Ok(None) };
        raw.split(',')
            .map(|part| {
                part.trim().parse().map_err(|e: T::Err| Error::Parse {
                    path: self.source.clone(),
                    line: self.lines.get(key).copied().unwrap_or(0),
                    reason: format!("`{key}`: cannot parse `{}`: {e}", part.trim()),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Entries whose key starts with `prefix.`, with the prefix removed.
    /// Line numbers and the source name are kept for error messages.
    pub fn section(&self, prefix: &str) -> KvFile {
        let mut out = KvFile {
            source: self.source.clone(),
            ..Default::default()
        };
        let lead = format!("{prefix}.");
        for (k, v) in &self.entries {
            if let Some(rest) = k.strip_prefix(&lead) {
                out.lines.insert(rest.to_owned(), self.lines.get(k).copied().unwrap_or(0));
                out.entries.push((rest.to_owned(), v.clone()));
            }
        }
        out
    }

    /// Copy of this file with every key prefixed by `prefix.`.
    pub fn prefixed(&self, prefix: &str) -> KvFile {
        KvFile::from_pairs(self.entries.iter().map(|(k, v)| (format!("{prefix}.{k}"), v)))
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: self.source.clone(),
                    line: self.lines.get(k).copied().unwrap_or(0),
                    reason: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
