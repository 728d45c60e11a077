//! `key=value` text files used for configs and run manifests.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{FormatError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blank lines and lines starting with `#` are ignored. Later
    /// duplicates replace earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Syntax {
                line: i + 1,
                message: format!("expected key=value, found `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(FormatError::Syntax {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_owned(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| FormatError::Syntax {
                    line: self.line_of(key),
                    message: format!("bad value for `{key}`: {e}"),
                })
            })
            .transpose()
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.iter().position(|(k, _)| k == key).map_or(0, |i| i + 1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let kv = KeyValues::parse("# run\nepochs = 30\n\nlr=5e-5\nepochs=4\n").unwrap();
        assert_eq!(kv.parsed::<usize>("epochs").unwrap(), Some(4));
        assert_eq!(kv.parsed::<f64>("lr").unwrap(), Some(5e-5));
        assert_eq!(kv.parsed::<f64>("missing").unwrap(), None);
        assert_eq!(kv.to_string(), "epochs=4\nlr=5e-5\n");
        assert!(kv.parsed::<usize>("lr").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("=3").is_err());
    }
}
