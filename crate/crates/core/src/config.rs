//! Flat `key = value` configuration text.
//!
//! ```text
//! # comment
//! ell = 6.5
//! rho_list = 0.1, 0.05, 0.025
//! ```
//!
//! Keys are unique; values are trimmed; lists are comma-separated.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<F: FromStr>(&self, key: &str) -> Result<Option<F>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                message: format!("cannot parse {key} = {v:?}"),
            }),
        }
    }

    pub fn get_or<F: FromStr>(&self, key: &str, default: F) -> Result<F> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<F: FromStr>(&self, key: &str) -> Result<Option<Vec<F>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        line: *line,
                        message: format!("cannot parse list entry {s:?} of {key}"),
                    })
                })
                .collect::<Result<Vec<F>>>()
                .map(Some),
        }
    }

    /// Fails on keys outside `known`, naming the first offender.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown key {key:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Builder for the same format, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct KeyValueWriter {
    out: String,
}

impl KeyValueWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str("# ");
        self.out.push_str(text);
        self.out.push('\n');
        self
    }

    pub fn entry(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn list<V: Display>(&mut self, key: &str, values: &[V]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.entry(key, joined.join(", "))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}
