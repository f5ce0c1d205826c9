//! Flat `key = value` configuration with typed accessors.
//!
//! Blank lines and `#` comments are ignored. Later assignments (including
//! command-line overrides) replace earlier ones. Every key must be consumed by
//! some accessor; [`Config::finish`] reports the ones that were not.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Syntax { line: usize, msg: String },
    Value { key: String, value: String, msg: String },
    Unknown(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Syntax { line, msg } => write!(f, "line {line}: {msg}"),
            ConfigError::Value { key, value, msg } => write!(f, "{key} = {value:?}: {msg}"),
            ConfigError::Unknown(keys) => write!(f, "unknown keys: {}", keys.join(", ")),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn split_assignment(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.entries.insert(k, v);
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = split_assignment(assignment).ok_or_else(|| ConfigError::Syntax {
            line: 0,
            msg: format!("override {assignment:?} is not `key=value`"),
        })?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.into(),
                value: v.into(),
                msg: e.to_string(),
            }),
        }
    }

    /// `none` (any case) maps to `None`.
    pub fn get_opt<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                key: key.into(),
                value: v.into(),
                msg: e.to_string(),
            }),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|e: T::Err| ConfigError::Value {
                        key: key.into(),
                        value: v.into(),
                        msg: e.to_string(),
                    })
                })
                .collect(),
        }
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    /// Errors if any key was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = Config::parse("# top\na = 1\n\nb = 2.5 # trailing\nlist = 1, 2,3\n").unwrap();
        c.set("a=7").unwrap();
        assert_eq!(c.get("a", 0u32).unwrap(), 7);
        assert_eq!(c.get("b", 0.0f64).unwrap(), 2.5);
        assert_eq!(c.get_list("list", vec![0u8]).unwrap(), vec![1, 2, 3]);
        assert_eq!(c.get("missing", 9i32).unwrap(), 9);
        c.finish().unwrap();
    }

    #[test]
    fn reports_bad_lines_values_and_unknown_keys() {
        assert!(matches!(Config::parse("a = 1\nnonsense\n"), Err(ConfigError::Syntax { line: 2, .. })));
        let c = Config::parse("n = x\nstray = 1\n").unwrap();
        assert!(matches!(c.get("n", 0usize), Err(ConfigError::Value { .. })));
        assert_eq!(c.finish(), Err(ConfigError::Unknown(vec!["stray".into()])));
    }

    #[test]
    fn none_is_an_explicit_absence() {
        let c = Config::parse("w = none\n").unwrap();
        assert_eq!(c.get_opt("w", Some(0.1f64)).unwrap(), None);
        assert_eq!(c.get_opt("v", Some(0.1f64)).unwrap(), Some(0.1));
    }
}
