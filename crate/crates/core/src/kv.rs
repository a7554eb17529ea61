//! Plain `key=value` text: one pair per line, `#` comments, blank lines ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// Parses `text`; `what` names the document in error messages.
    pub fn parse(text: &str, what: &'static str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
                what,
                detail: format!("line {} has no '='", lineno + 1),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Malformed {
                    what,
                    detail: format!("line {} has an empty key", lineno + 1),
                });
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Malformed {
                    what,
                    detail: format!("duplicate key {k}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses a required key.
    pub fn require<T>(&self, key: &str, what: &'static str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.get(key).ok_or_else(|| Error::Malformed {
            what,
            detail: format!("missing key {key}"),
        })?;
        raw.parse().map_err(|e| Error::Malformed {
            what,
            detail: format!("{key}={raw}: {e}"),
        })
    }

    /// Parses an optional key.
    pub fn optional<T>(&self, key: &str, what: &'static str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.require(key, what).map(Some),
        }
    }
}
