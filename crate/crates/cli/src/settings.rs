//! Flag/config-file resolution and the exit-code contract.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::anyhow;

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input = 2,
    Config = 3,
    Runtime = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn or_input(self) -> Outcome<T>;
    fn or_config(self) -> Outcome<T>;
    fn or_runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_input(self) -> Outcome<T> {
        self.map_err(|e| Failure { kind: Kind::Input, error: e.into() })
    }
    fn or_config(self) -> Outcome<T> {
        self.map_err(|e| Failure { kind: Kind::Config, error: e.into() })
    }
    fn or_runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure { kind: Kind::Runtime, error: e.into() })
    }
}

pub fn config_error(message: impl Display) -> Failure {
    Failure {
        kind: Kind::Config,
        error: anyhow!("{message}"),
    }
}

/// `key=value` settings from `--config`; command-line flags take precedence.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("{}: {e}", path.display()))
            .or_config()?;
        let values = histag::tagger::parse_kv(&text)
            .map_err(|e| anyhow!("{}: {e}", path.display()))
            .or_config()?
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        Ok(Settings { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// The flag if given, otherwise the config value.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Outcome<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| config_error(format!("config key `{key}`: {e}"))),
            None => Ok(None),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Outcome<T>
    where
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Outcome<T>
    where
        T::Err: Display,
    {
        self.get(flag, key)?.ok_or_else(|| {
            config_error(format!("missing --{} (or `{key}` in the config file)", key.replace('_', "-")))
        })
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Outcome<PathBuf> {
        self.require(flag, key)
    }
}
