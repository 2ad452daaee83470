//! `key = value` run configuration covering the model and the training recipe.

use std::fmt::Write as _;
use std::path::Path;

use sicrn::model::SicrnConfig;
use sicrn::training::TrainConfig;
use sicrn::Error;

/// Starting point that the remaining keys modify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    fn parse(v: &str) -> Result<Self, Error> {
        match v.trim() {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Argument(format!("preset: expected paper or desk, got {other:?}"))),
        }
    }

    fn model(self) -> SicrnConfig {
        match self {
            Self::Paper => SicrnConfig::paper(),
            Self::Desk => SicrnConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: SicrnConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: SicrnConfig::paper(), train: TrainConfig::default() }
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<(String, String)>, Error> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Format(format!("line {lineno}: expected key = value, got {line:?}")))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    /// Parse config text, then apply `overrides` in order. A `preset` key
    /// (paper or desk) selects the starting model wherever it appears.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            pairs.extend(parse_line(line, i + 1)?);
        }
        pairs.extend(overrides.iter().cloned());
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => Preset::parse(v)?,
            None => Preset::Paper,
        };
        let mut cfg = Self { model: preset.model(), train: TrainConfig::default() };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            Ok(())
        } else {
            Err(Error::Argument(format!("unknown config key {key}")))
        }
    }

    /// Resolved configuration; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_kv().into_iter().chain(self.train.to_kv()) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Split `KEY=VALUE` command-line overrides.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>, Error> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Argument(format!("override {s:?} is not KEY=VALUE")))
        })
        .collect()
}
