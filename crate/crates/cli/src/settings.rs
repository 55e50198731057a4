//! Option resolution: flags, then MMF2F_* environment (paths only), then the
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::env;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Keys the config file may carry. Anything else is a usage error so typos
/// fail loudly instead of silently applying defaults.
const SCALAR_KEYS: &[&str] = &["seed", "epochs", "lr", "p", "rank", "n"];
const PATH_KEYS: &[&str] = &["manifest", "checkpoint", "report", "out", "metrics"];

#[derive(Debug)]
pub struct FileConfig {
    values: BTreeMap<String, toml::Value>,
}

impl FileConfig {
    /// Loads the config file named by the flag or MMF2F_CONFIG; an absent
    /// setting means an empty config.
    pub fn load(flag: Option<&Path>) -> Result<FileConfig, CliError> {
        let path = match flag.map(Path::to_path_buf).or_else(|| env_path("MMF2F_CONFIG")) {
            Some(p) => p,
            None => {
                return Ok(FileConfig {
                    values: BTreeMap::new(),
                })
            }
        };
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let table: toml::Table = text.parse().map_err(|e| {
            CliError::Usage(format!("config file {}: {e}", path.display()))
        })?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            if !SCALAR_KEYS.contains(&key.as_str()) && !PATH_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config file {}: unknown key {key:?} (allowed: {}, {})",
                    path.display(),
                    SCALAR_KEYS.join(", "),
                    PATH_KEYS.join(", ")
                )));
            }
            if value.is_table() || value.is_array() {
                return Err(CliError::Usage(format!(
                    "config file {}: key {key:?} must be a flat value",
                    path.display()
                )));
            }
            values.insert(key, value);
        }
        Ok(FileConfig { values })
    }

    fn integer(&self, key: &str) -> Result<Option<i64>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) => Ok(Some(*v)),
            Some(other) => Err(CliError::Usage(format!(
                "config key {key:?} must be an integer, got {other}"
            ))),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.integer(key)? {
            None => Ok(None),
            Some(v) => u64::try_from(v)
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key:?} must be nonnegative"))),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.integer(key)? {
            None => Ok(None),
            Some(v) => usize::try_from(v)
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key:?} must be nonnegative"))),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(CliError::Usage(format!(
                "config key {key:?} must be a number, got {other}"
            ))),
        }
    }

    pub fn get_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::String(v)) => Ok(Some(PathBuf::from(v))),
            Some(other) => Err(CliError::Usage(format!(
                "config key {key:?} must be a string path, got {other}"
            ))),
        }
    }
}

fn env_path(var: &str) -> Option<PathBuf> {
    env::var_os(var).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Resolves a path option: flag, then MMF2F_<KEY>, then config file.
pub fn resolve_path(
    flag: Option<PathBuf>,
    key: &str,
    file: &FileConfig,
) -> Result<Option<PathBuf>, CliError> {
    if let Some(p) = flag {
        return Ok(Some(p));
    }
    let var = format!("MMF2F_{}", key.to_uppercase());
    if let Some(p) = env_path(&var) {
        return Ok(Some(p));
    }
    file.get_path(key)
}

/// Like resolve_path but the option is mandatory for the subcommand.
pub fn require_path(
    flag: Option<PathBuf>,
    key: &str,
    file: &FileConfig,
) -> Result<PathBuf, CliError> {
    resolve_path(flag, key, file)?.ok_or_else(|| {
        CliError::Usage(format!(
            "--{key} is required (or MMF2F_{}, or config key {key:?})",
            key.to_uppercase()
        ))
    })
}

pub fn resolve_u64(
    flag: Option<u64>,
    key: &str,
    file: &FileConfig,
    default: u64,
) -> Result<u64, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get_u64(key)?.unwrap_or(default)),
    }
}

pub fn resolve_usize(
    flag: Option<usize>,
    key: &str,
    file: &FileConfig,
    default: usize,
) -> Result<usize, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get_usize(key)?.unwrap_or(default)),
    }
}

pub fn resolve_f64(
    flag: Option<f64>,
    key: &str,
    file: &FileConfig,
    default: f64,
) -> Result<f64, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get_f64(key)?.unwrap_or(default)),
    }
}
