//! Option resolution: command-line flag, then the `[subcommand]` table of
//! the config file, then its top level, then the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Result;
use serde::Serialize;

use crate::CliError;

struct ConfigFile {
    path: PathBuf,
    text: String,
    root: toml::Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    File,
    Default,
}

#[derive(Serialize)]
pub struct Resolved {
    pub value: serde_json::Value,
    pub source: Source,
}

pub struct Settings {
    section: String,
    file: Option<ConfigFile>,
    pub values: BTreeMap<String, Resolved>,
    pub seeds: BTreeMap<String, u64>,
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => a.iter().map(scalar).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

impl Settings {
    pub fn load(config: Option<&Path>, section: &str) -> Result<Self> {
        let file = match config {
            None => None,
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                let root: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                    let offset = e.span().map_or(0, |s| s.start);
                    CliError::Input(format!("{}: malformed file at byte {offset}: {}", path.display(), e.message()))
                })?;
                Some(ConfigFile { path: path.to_path_buf(), text, root })
            }
        };
        Ok(Self { section: section.to_string(), file, values: BTreeMap::new(), seeds: BTreeMap::new() })
    }

    /// Raw config entry for `key`, with dashes and underscores interchangeable.
    fn lookup(&self, key: &str) -> Option<(&ConfigFile, &toml::Value)> {
        let f = self.file.as_ref()?;
        let names = [key.to_string(), key.replace('-', "_")];
        let in_section = f.root.get(&self.section).and_then(|s| s.as_table());
        in_section
            .and_then(|t| names.iter().find_map(|n| t.get(n)))
            .or_else(|| names.iter().find_map(|n| f.root.get(n).filter(|v| !v.is_table())))
            .map(|v| (f, v))
    }

    fn file_error(f: &ConfigFile, key: &str, msg: impl Display) -> CliError {
        let alt = key.replace('-', "_");
        let mut offset = 0;
        for line in f.text.split_inclusive('\n') {
            let t = line.trim_start();
            if t.starts_with(key) || t.starts_with(&alt) {
                offset += line.len() - t.len();
                break;
            }
            offset += line.len();
        }
        let offset = offset.min(f.text.len());
        CliError::Input(format!("{}: malformed file at byte {offset}: {key}: {msg}", f.path.display()))
    }

    fn record(&mut self, key: &str, raw: &str, source: Source) {
        self.values.insert(key.to_string(), Resolved { value: serde_json::Value::String(raw.to_string()), source });
    }

    /// Optional value: flag, then config file.
    pub fn opt<T>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(raw) = flag {
            let v = raw.parse::<T>().map_err(|e| CliError::Usage(format!("--{key}: {e}")))?;
            self.record(key, raw, Source::Flag);
            return Ok(Some(v));
        }
        let Some((f, value)) = self.lookup(key) else { return Ok(None) };
        let raw = scalar(value).ok_or_else(|| Self::file_error(f, key, "expected a scalar or an array of scalars"))?;
        let v = raw.parse::<T>().map_err(|e| Self::file_error(f, key, e))?;
        self.record(key, &raw, Source::File);
        Ok(Some(v))
    }

    /// Value with a built-in default.
    pub fn get<T>(&mut self, key: &str, flag: Option<&str>, default: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.opt(key, flag)? {
            return Ok(v);
        }
        let v = default.parse::<T>().map_err(|e| CliError::Internal(format!("default for {key}: {e}")))?;
        self.record(key, default, Source::Default);
        Ok(v)
    }

    pub fn req<T>(&mut self, key: &str, flag: Option<&str>) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| CliError::Usage(format!("--{key} is required")).into())
    }

    pub fn seed(&mut self, key: &str, flag: Option<&str>, default: u64) -> Result<u64> {
        let s: u64 = self.get(key, flag, &default.to_string())?;
        self.seeds.insert(key.to_string(), s);
        Ok(s)
    }

    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.get(key, flag.then_some("true"), "false")
    }

    /// Repeated flag or a config array.
    pub fn list(&mut self, key: &str, flag: &[String]) -> Result<Vec<PathBuf>> {
        if !flag.is_empty() {
            self.values.insert(key.to_string(), Resolved { value: serde_json::json!(flag), source: Source::Flag });
            return Ok(flag.iter().map(PathBuf::from).collect());
        }
        let Some((f, value)) = self.lookup(key) else { return Ok(Vec::new()) };
        let items: Vec<String> = match value {
            toml::Value::Array(a) => a.iter().map(|v| v.as_str().map(str::to_string)).collect::<Option<_>>(),
            toml::Value::String(s) => Some(vec![s.clone()]),
            _ => None,
        }
        .ok_or_else(|| Self::file_error(f, key, "expected a string or an array of strings"))?;
        self.values.insert(key.to_string(), Resolved { value: serde_json::json!(items), source: Source::File });
        Ok(items.into_iter().map(PathBuf::from).collect())
    }

    pub fn config_path(&self) -> Option<&Path> {
        self.file.as_ref().map(|f| f.path.as_path())
    }

    /// Resolved values as a plain JSON object, minus `skip`.
    pub fn plain(&self, skip: &[&str]) -> serde_json::Value {
        let map = self
            .values
            .iter()
            .filter(|(k, _)| !skip.contains(&k.as_str()))
            .map(|(k, r)| (k.clone(), r.value.clone()))
            .collect();
        serde_json::Value::Object(map)
    }
}
