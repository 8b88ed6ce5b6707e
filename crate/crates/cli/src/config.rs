//! Key/value config files and option resolution.
//!
//! Precedence for every resolvable option: command-line flag, then config
//! file entry, then the built-in default. The seed additionally consults the
//! `AGH_SEED` environment variable between the config file and the default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Environment variable consulted when neither flag nor config supplies a seed.
pub const SEED_ENV_VAR: &str = "AGH_SEED";

/// Parsed `key=value` config file. Keys are unique; later duplicates are rejected.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Config with no entries; every lookup falls through.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses a config file. Blank lines and lines starting with `#` are
    /// ignored; everything else must be `key=value` with a non-empty key.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("failed to read config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    number + 1
                );
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                bail!("{}:{}: empty key", path.display(), number + 1);
            }
            if values.insert(key.clone(), value).is_some() {
                bail!("{}:{}: duplicate key {key:?}", path.display(), number + 1);
            }
        }
        Ok(Self { values })
    }

    /// Loads `path` when given, otherwise returns an empty config.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::empty()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses the entry for `key` if present. A present-but-unparsable value
    /// is an error rather than a silent fallthrough.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}={raw:?}: {e}"),
            },
        }
    }
}

/// Flag, then config, then default.
pub fn resolve<T>(flag: Option<T>, config: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(config.parse(key)?.unwrap_or(default))
}

/// Seed resolution: flag, config `seed`, `AGH_SEED` environment variable, 0.
pub fn resolve_seed(flag: Option<u64>, config: &ConfigFile) -> Result<u64> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = config.parse("seed")? {
        return Ok(v);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw
            .parse()
            .with_context(|| format!("{SEED_ENV_VAR}={raw:?} is not a valid seed")),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(body.as_bytes()).unwrap();
        file
    }

    #[test]
    fn parses_keys_comments_and_blanks() {
        let file = write_config("# comment\n\nseed = 7\nmu=2.5\nmethod = sah\n");
        let cfg = ConfigFile::load(file.path()).unwrap();
        assert_eq!(cfg.get("seed"), Some("7"));
        assert_eq!(cfg.parse::<f64>("mu").unwrap(), Some(2.5));
        assert_eq!(cfg.get("method"), Some("sah"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        let file = write_config("seed 7\n");
        assert!(ConfigFile::load(file.path()).is_err());
        let file = write_config("a=1\na=2\n");
        let err = ConfigFile::load(file.path()).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn present_but_unparsable_is_an_error() {
        let file = write_config("mu=abc\n");
        let cfg = ConfigFile::load(file.path()).unwrap();
        assert!(cfg.parse::<f64>("mu").is_err());
    }

    #[test]
    fn resolve_prefers_flag_over_config_over_default() {
        let file = write_config("mu=2.0\n");
        let cfg = ConfigFile::load(file.path()).unwrap();
        assert_eq!(resolve(Some(9.0), &cfg, "mu", 1.0).unwrap(), 9.0);
        assert_eq!(resolve(None, &cfg, "mu", 1.0).unwrap(), 2.0);
        assert_eq!(resolve::<f64>(None, &cfg, "other", 1.0).unwrap(), 1.0);
    }

    // Seed precedence against the environment variable lives in its own
    // integration test binary: env vars are process-global and would race
    // with other tests here.
    #[test]
    fn resolve_seed_prefers_flag_then_config() {
        let file = write_config("seed=11\n");
        let cfg = ConfigFile::load(file.path()).unwrap();
        assert_eq!(resolve_seed(Some(3), &cfg).unwrap(), 3);
        assert_eq!(resolve_seed(None, &cfg).unwrap(), 11);
    }
}
