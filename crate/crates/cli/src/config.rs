//! Layered settings: command-line flag, then config file, then `OPINET_*`
//! environment variable, then built-in default. Every value read is kept
//! with its source so the effective configuration can be printed and stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::CliError;

pub const ENV_PREFIX: &str = "OPINET_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Env,
    Default,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Flag => "flag",
            Source::File => "file",
            Source::Env => "env",
            Source::Default => "default",
        }
    }
}

fn norm_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

/// Parses `key = value` lines. `#` starts a comment; `:` also separates.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=').or_else(|| line.split_once(':')) else {
            return Err(format!("line {}: expected `key = value`", n + 1));
        };
        let v = v.trim().trim_matches('"');
        out.insert(norm_key(k), v.to_string());
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    file_path: Option<PathBuf>,
    used: BTreeSet<String>,
    entries: Vec<(String, String, Source)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let mut r = Resolver::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config file {}: {e}", path.display())))?;
            r.file = parse_kv(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            r.file_path = Some(path.to_path_buf());
        }
        Ok(r)
    }

    fn lookup(&mut self, key: &str) -> Option<(String, Source)> {
        let k = norm_key(key);
        self.used.insert(k.clone());
        if let Some(v) = self.file.get(&k) {
            return Some((v.clone(), Source::File));
        }
        let var = format!("{ENV_PREFIX}{}", k.to_ascii_uppercase());
        std::env::var(var).ok().filter(|v| !v.is_empty()).map(|v| (v, Source::Env))
    }

    fn parse<T: FromStr>(key: &str, raw: &str, source: Source) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.trim()
            .parse()
            .map_err(|e| CliError::config(format!("{key} = {raw:?} ({}): {e}", source.as_str())))
    }

    fn record(&mut self, key: &str, value: String, source: Source) {
        self.entries.retain(|(k, _, _)| k != key);
        self.entries.push((key.to_string(), value, source));
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(self.get_opt(key, flag)?.unwrap_or_else(|| {
            self.record(key, default.to_string(), Source::Default);
            default
        }))
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.used.insert(norm_key(key));
        let (value, source) = match flag {
            Some(v) => (v, Source::Flag),
            None => match self.lookup(key) {
                Some((raw, source)) => (Self::parse(key, &raw, source)?, source),
                None => return Ok(None),
            },
        };
        self.record(key, value.to_string(), source);
        Ok(Some(value))
    }

    /// Switches are on when given on the command line; otherwise the file or
    /// environment may set them with true/false/1/0/yes/no.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.used.insert(norm_key(key));
        let (value, source) = if flag {
            (true, Source::Flag)
        } else {
            match self.lookup(key) {
                Some((raw, source)) => {
                    let v = match raw.trim().to_ascii_lowercase().as_str() {
                        "true" | "1" | "yes" | "on" => true,
                        "false" | "0" | "no" | "off" => false,
                        _ => return Err(CliError::config(format!("{key} = {raw:?}: expected true or false"))),
                    };
                    (v, source)
                }
                None => (false, Source::Default),
            }
        };
        self.record(key, value.to_string(), source);
        Ok(value)
    }

    /// Records a derived or secret value for display without parsing it.
    pub fn note(&mut self, key: &str, value: impl Into<String>, source: Source) {
        self.record(key, value.into(), source);
    }

    /// Fails on config-file keys that the command never asked for.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let path = self.file_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Err(CliError::config(format!(
            "{path}: unknown keys for this command: {}",
            unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )))
    }

    pub fn header(&self, command: &str) -> String {
        let width = self.entries.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("# opinet {command}\n");
        if let Some(p) = &self.file_path {
            out.push_str(&format!("# config file: {}\n", p.display()));
        }
        for (k, v, s) in &self.entries {
            out.push_str(&format!("# {k:<width$} = {v}  [{}]\n", s.as_str()));
        }
        out
    }

    pub fn to_json(&self, command: &str) -> Value {
        let mut settings = Map::new();
        for (k, v, s) in &self.entries {
            let mut e = Map::new();
            e.insert("value".into(), Value::String(v.clone()));
            e.insert("source".into(), Value::String(s.as_str().into()));
            settings.insert(k.clone(), Value::Object(e));
        }
        let mut m = Map::new();
        m.insert("command".into(), Value::String(command.into()));
        m.insert("settings".into(), Value::Object(settings));
        Value::Object(m)
    }
}
