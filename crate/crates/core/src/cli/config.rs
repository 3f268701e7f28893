//! `key = value` run configuration files.
//!
//! One entry per line, `#` starts a comment, `include = other.cfg` splices in
//! another file (relative to the including one) at that position. Later
//! entries win, and command-line overrides are applied after every file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: String,
    origin: String,
}

/// Raw entries plus the bookkeeping needed to reject unknown keys and to
/// report every bad value at once.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: IndexMap<String, Entry>,
    taken: BTreeSet<String>,
    errors: Vec<String>,
}

impl KvConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.load(path, 0)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.parse_into(text, origin, None, 0)?;
        Ok(cfg)
    }

    fn load(&mut self, path: &Path, depth: usize) -> Result<(), ConfigError> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(ConfigError(format!(
                "include depth above {MAX_INCLUDE_DEPTH} at {} (cycle?)",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf);
        self.parse_into(&text, &path.display().to_string(), dir, depth)
    }

    fn parse_into(
        &mut self,
        text: &str,
        origin: &str,
        dir: Option<PathBuf>,
        depth: usize,
    ) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("{origin}:{}: expected key = value, got '{line}'", n + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError(format!("{origin}:{}: empty key", n + 1)));
            }
            if k == "include" {
                let p = Path::new(v);
                let p = match &dir {
                    Some(d) if p.is_relative() => d.join(p),
                    _ => p.to_path_buf(),
                };
                self.load(&p, depth + 1)?;
            } else {
                self.set(k, v, &format!("{origin}:{}", n + 1));
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin: origin.to_string(),
            },
        );
    }

    /// Applies `key=value` overrides on top of the file contents.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim(), "command line");
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Typed value of `key`, if present. A malformed value is recorded and
    /// reported by [`KvConfig::finish`].
    pub fn get<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        self.taken.insert(key.to_string());
        let e = self.entries.get(key)?;
        match e.value.parse() {
            Ok(v) => Some(v),
            Err(err) => {
                self.errors
                    .push(format!("{key} = '{}' ({}): {err}", e.value, e.origin));
                None
            }
        }
    }

    /// Overwrites `slot` when `key` is present and well formed.
    pub fn fill<T: FromStr>(&mut self, key: &str, slot: &mut T)
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.get(key) {
            *slot = v;
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        if !self.contains(key) {
            self.taken.insert(key.to_string());
            self.errors.push(format!("{key}: missing required key"));
            return None;
        }
        self.get(key)
    }

    /// Records a range violation found after parsing.
    pub fn invalid(&mut self, key: &str, why: &str) {
        let shown = self.raw(key).map(|v| format!(" = '{v}'")).unwrap_or_default();
        self.errors.push(format!("{key}{shown}: {why}"));
    }

    /// Fails if any value was malformed or out of range, or if a key was never
    /// consumed by the command.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let mut errors = self.errors.clone();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !self.taken.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            errors.push(format!("unknown keys: {}", unknown.join(", ")));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(format!("invalid configuration:\n  {}", errors.join("\n  "))))
        }
    }
}
