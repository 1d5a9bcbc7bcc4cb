//! Flat `key = value` configuration and parameter resolution.
//!
//! A value is taken from the command-line flag if given, otherwise from the
//! config file, otherwise from the built-in default. `OQA_SEED` sits between
//! the flag and the config file for `seed`. Every resolved value is recorded
//! so stages can echo their effective parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const SEED_ENV: &str = "OQA_SEED";

/// Keys accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "b",
    "chunk_size",
    "dataset",
    "excluded",
    "index",
    "input",
    "judgments_out",
    "k",
    "k1",
    "k_pos",
    "ks",
    "mrr_k",
    "neg_window",
    "output",
    "passages",
    "per_question",
    "per_question_k",
    "per_question_metric",
    "pos_window",
    "predictions",
    "qrels",
    "queries",
    "reader_top",
    "remove_articles",
    "repetitions",
    "run",
    "run_tag",
    "sampling",
    "scoring",
    "seed",
    "sizes",
    "snapshot",
    "tallies",
    "stemmer",
    "threads",
    "tokenizer",
    "turkish_lowercase",
    "values",
    "vectors",
    "wiki",
];

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::validation(format!(
                    "config line {}: expected key = value",
                    i + 1
                )));
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::validation(format!(
                    "config line {}: unknown key {key:?}",
                    i + 1
                )));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::validation(format!(
                    "config line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
        }
        Ok(Config {
            values,
            source: None,
        })
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::validation(format!("config key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }
}

/// Comma-separated list, e.g. `1,5,20`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvList<T>(pub Vec<T>);

impl<T: FromStr> FromStr for CsvList<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err("empty list".to_string())
                } else {
                    Ok(CsvList(v))
                }
            })
    }
}

impl<T: Serialize> Serialize for CsvList<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

/// Resolves parameters for one stage and records the effective values.
pub struct Resolver<'a> {
    cfg: &'a Config,
    effective: BTreeMap<String, Value>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        let mut effective = BTreeMap::new();
        if let Some(p) = cfg.source() {
            effective.insert("config".to_string(), Value::String(p.display().to_string()));
        }
        Resolver { cfg, effective }
    }

    fn note<T: Serialize>(&mut self, key: &str, v: &T) {
        self.effective.insert(
            key.to_string(),
            serde_json::to_value(v).unwrap_or(Value::Null),
        );
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.cfg.get(key)?.unwrap_or(default),
        };
        self.note(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.cfg.get(key)?,
        };
        self.note(key, &v);
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: fmt::Display,
    {
        self.optional(key, flag)?.ok_or_else(|| {
            CliError::validation(format!("missing required parameter --{}", key.replace('_', "-")))
        })
    }

    /// A boolean switch: set by the flag, or by `true`/`false` in the config.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        let v = flag || self.cfg.get::<bool>(key)?.unwrap_or(false);
        self.note(key, &v);
        Ok(v)
    }

    /// `seed` with the environment override.
    pub fn seed(&mut self, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        let env = match std::env::var(SEED_ENV) {
            Ok(raw) => Some(raw.trim().parse::<u64>().map_err(|e| {
                CliError::validation(format!("{SEED_ENV}: cannot parse {raw:?}: {e}"))
            })?),
            Err(_) => None,
        };
        let v = match (flag, env) {
            (Some(v), _) | (None, Some(v)) => v,
            (None, None) => self.cfg.get("seed")?.unwrap_or(default),
        };
        self.note("seed", &v);
        Ok(v)
    }

    /// An input path that must exist.
    pub fn input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p: PathBuf = self.required(key, flag)?;
        if !p.exists() {
            return Err(CliError::validation(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn optional_input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let p: Option<PathBuf> = self.optional(key, flag)?;
        if let Some(p) = &p {
            if !p.exists() {
                return Err(CliError::validation(format!("{key}: {} does not exist", p.display())));
            }
        }
        Ok(p)
    }

    /// Records a derived value that has no flag of its own.
    pub fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.note(key, v);
    }

    pub fn effective(&self) -> &BTreeMap<String, Value> {
        &self.effective
    }

    pub fn into_effective(self) -> BTreeMap<String, Value> {
        self.effective
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let cfg = Config::parse("# comment\nk1 = 1.2\n\npos-window=30\n").unwrap();
        assert_eq!(cfg.get::<f64>("k1").unwrap(), Some(1.2));
        assert_eq!(cfg.get::<usize>("pos_window").unwrap(), Some(30));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(Config::parse("colour = red").is_err());
        assert!(Config::parse("k = 1\nk = 2").is_err());
        assert!(Config::parse("k").is_err());
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let cfg = Config::parse("k = 50\n").unwrap();
        let mut r = Resolver::new(&cfg);
        assert_eq!(r.value("k", Some(7usize), 100).unwrap(), 7);
        assert_eq!(r.value("k", None, 100usize).unwrap(), 50);
        assert_eq!(r.value("k1", None, 0.9f64).unwrap(), 0.9);
        let eff = r.into_effective();
        assert_eq!(eff["k1"], serde_json::json!(0.9));
    }

    #[test]
    fn lists() {
        let l: CsvList<usize> = "1, 5,20".parse().unwrap();
        assert_eq!(l.0, vec![1, 5, 20]);
        assert!("".parse::<CsvList<usize>>().is_err());
        assert!("1,x".parse::<CsvList<usize>>().is_err());
    }
}
