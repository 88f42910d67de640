//! Flat `key = value` settings file. Keys are the long flag names; a flag
//! given on the command line wins over the file, and the file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use analogia::Error;

const KEYS: &[&str] = &[
    "seed",
    "prototypes",
    "types",
    "negatives",
    "epochs",
    "batch-size",
    "lr",
    "weight-decay",
    "dropout",
    "margin",
    "loss-variant",
    "l2-lambda",
    "cosine-epsilon",
    "clip-norm",
    "dim",
    "mode",
];

#[derive(Debug, Default)]
pub struct Settings {
    path: Option<String>,
    values: BTreeMap<String, (usize, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected key = value, got {line:?}")))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(bad(i + 1, format!("unknown setting {key:?}")));
            }
            if values.insert(key.clone(), (i + 1, value.trim().to_owned())).is_some() {
                return Err(bad(i + 1, format!("{key} set twice")));
            }
        }
        Ok(Settings {
            path: Some(path.display().to_string()),
            values,
        })
    }

    /// Value from the flag, else from the file, else `None`.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KEYS.contains(&key), "{key} is not a settings key");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone().unwrap_or_default().into(),
                line: *line,
                msg: format!("{key}: {e}"),
            }),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }
}
