//! Flat `key value` text files used for manifests and sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn set_list<T: ToString>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.set(key, joined.join(" "))
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)?
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Format(format!("bad value `{v}` in `{key}`")))
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push(' ');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            entries.insert(k.to_owned(), v.trim().to_owned());
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut kv = KvFile::new();
        kv.set("lambda", 0.1f64 + 0.2).set_list("coef", &[1.5, -0.25]);
        let back = KvFile::parse(&kv.render()).unwrap();
        assert_eq!(back.get::<f64>("lambda").unwrap(), 0.1 + 0.2);
        assert_eq!(back.get_list::<f64>("coef").unwrap(), vec![1.5, -0.25]);
        assert!(back.get::<f64>("missing").is_err());
    }
}
