//! Global settings: flags, then `DETOXKIT_*` environment variables (both
//! handled by clap), then a `key = value` config file, then defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use super::CliError;

pub const DEFAULT_SEED: u64 = 3407;
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

const KEYS: [&str; 8] = [
    "scorer",
    "generator",
    "seed",
    "parallelism",
    "log_level",
    "lexicon_dir",
    "templates",
    "timeout_secs",
];

/// Parsed config file. Blank lines and `#` comments are skipped; values may
/// be wrapped in double quotes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| CliError::Validation(format!("{}:{}: {msg}", origin.display(), idx + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value".into()))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(bad(format!("unknown key {key:?}")));
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            values.insert(key, value.to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Validation(format!("config key {key}: invalid value {raw:?}"))),
        }
    }
}

/// Global options as given on the command line or environment.
#[derive(Clone, Debug, Default)]
pub struct GlobalFlags {
    pub scorer: Option<String>,
    pub generator: Option<String>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub log_level: Option<String>,
    pub lexicon_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Settings {
    pub scorer: String,
    pub generator: String,
    /// The pipeline has no stochastic step; the seed is carried for
    /// reproducibility records only.
    pub seed: u64,
    pub parallelism: usize,
    pub log_level: String,
    pub lexicon_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub timeout: Duration,
}

impl Settings {
    pub fn resolve(flags: &GlobalFlags, file: &ConfigFile) -> Result<Self, CliError> {
        let parallelism = match flags.parallelism.or(file.get("parallelism")?) {
            Some(0) => return Err(CliError::Validation("parallelism must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Ok(Settings {
            scorer: flags.scorer.clone().or(file.get("scorer")?).unwrap_or_else(|| "fallback".into()),
            generator: flags.generator.clone().or(file.get("generator")?).unwrap_or_else(|| "delete".into()),
            seed: flags.seed.or(file.get("seed")?).unwrap_or(DEFAULT_SEED),
            parallelism,
            log_level: flags.log_level.clone().or(file.get("log_level")?).unwrap_or_else(|| "warn".into()),
            lexicon_dir: flags.lexicon_dir.clone().or(file.get("lexicon_dir")?),
            templates: flags.templates.clone().or(file.get("templates")?),
            timeout: Duration::from_secs(flags.timeout_secs.or(file.get("timeout_secs")?).unwrap_or(DEFAULT_TIMEOUT_SECS)),
        })
    }
}
