//! Flat key=value config file support. Every key mirrors a command-line
//! flag, and a flag given on the command line always wins over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Keys the config file may contain; anything else is a typo.
const KNOWN_KEYS: [&str; 19] = [
    "seed",
    "out",
    "mode",
    "llm",
    "jobs",
    "n",
    "ratio",
    "trees",
    "max_depth",
    "mtry",
    "min_samples_split",
    "train_fraction",
    "max_attempts",
    "repair_all",
    "reduce",
    "reduce_ratio",
    "bank",
    "temperature",
    "endpoint",
];

#[derive(Debug, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    /// Parses a config file of `key = value` lines. `#` starts a comment;
    /// blank lines are skipped. No file means no settings.
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;

        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                );
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("{}:{}: unknown config key {key:?}", path.display(), lineno + 1);
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                bail!("{}:{}: duplicate config key {key:?}", path.display(), lineno + 1);
            }
        }
        Ok(Settings { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key {key}");
        self.map.get(key).map(String::as_str)
    }

    /// Parses a value out of the file, reporting which key was malformed.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(value) => Ok(Some(value)),
                Err(e) => bail!("config key {key}={raw:?}: {e}"),
            },
        }
    }
}

/// Flag value if given, else the config file's, else the default.
pub fn pick<T: FromStr>(flag: Option<T>, settings: &Settings, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(flag
        .map(Ok)
        .or_else(|| settings.parse(key).transpose())
        .transpose()?
        .unwrap_or(default))
}

/// Like [`pick`] but with no default.
pub fn pick_opt<T: FromStr>(flag: Option<T>, settings: &Settings, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    flag.map(Ok)
        .or_else(|| settings.parse(key).transpose())
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), text).unwrap();
        file
    }

    #[test]
    fn parses_keys_comments_and_blanks() {
        let file = write_config("# run settings\nseed = 42\n\ntrees=250 # wide forest\n");
        let settings = Settings::load(Some(file.path())).unwrap();
        assert_eq!(settings.get("seed"), Some("42"));
        assert_eq!(settings.parse::<usize>("trees").unwrap(), Some(250));
        assert_eq!(settings.get("ratio"), None);
    }

    #[test]
    fn flags_beat_the_file() {
        let file = write_config("seed = 42\n");
        let settings = Settings::load(Some(file.path())).unwrap();
        assert_eq!(pick(Some(9u64), &settings, "seed", 7).unwrap(), 9);
        assert_eq!(pick(None, &settings, "seed", 7).unwrap(), 42);
        assert_eq!(pick::<u64>(None, &Settings::default(), "seed", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let file = write_config("sede = 42\n");
        let err = Settings::load(Some(file.path())).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));

        let file = write_config("seed = 1\nseed = 2\n");
        let err = Settings::load(Some(file.path())).unwrap_err();
        assert!(err.to_string().contains("duplicate config key"));
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        let file = write_config("just words\n");
        assert!(Settings::load(Some(file.path())).is_err());

        let file = write_config("seed = lots\n");
        let settings = Settings::load(Some(file.path())).unwrap();
        assert!(settings.parse::<u64>("seed").is_err());
    }

    #[test]
    fn missing_config_file_is_an_error_but_no_file_is_fine() {
        assert!(Settings::load(Some(Path::new("/nonexistent/x.conf"))).is_err());
        assert!(Settings::load(None).unwrap().get("seed").is_none());
    }
}
