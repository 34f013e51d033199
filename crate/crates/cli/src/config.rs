//! Flat `key = value` experiment configuration with dotted module prefixes.
//!
//! Every subcommand starts from a table of defaults; a config file and then
//! command-line flags override entries. Keys missing from the defaults are
//! rejected. The resolved table is written next to the outputs and can be
//! passed back through `--config` to rerun the experiment exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub const SNAPSHOT_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        let mut c = Self::default();
        c.entries.insert("experiment".into(), experiment.into());
        c
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Adds defaults for every field of `value` under `prefix.`.
    pub fn add_defaults<T: Serialize>(&mut self, prefix: &str, value: &T) -> Result<()> {
        let Value::Object(fields) = serde_json::to_value(value)? else {
            bail!("defaults for `{prefix}` are not a record");
        };
        for (field, v) in fields {
            self.entries.insert(format!("{prefix}.{field}"), render(&v)?);
        }
        Ok(())
    }

    pub fn add_default(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    /// Overrides an existing key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.entries.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => {
                let known: Vec<&str> = self.entries.keys().map(String::as_str).collect();
                bail!("unknown config key `{key}` (known keys: {})", known.join(", "))
            }
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), lineno + 1))?;
            let key = key.trim();
            if key == "experiment" {
                let expected = self.get("experiment").unwrap_or_default();
                if value.trim() != expected {
                    bail!("{} configures `{}`, not `{expected}`", path.display(), value.trim());
                }
                continue;
            }
            self.set(key, value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Reads back the fields under `prefix.` into `T`, using `template`
    /// for the type of each field.
    pub fn extract<T: Serialize + DeserializeOwned>(&self, prefix: &str, template: &T) -> Result<T> {
        let Value::Object(fields) = serde_json::to_value(template)? else {
            bail!("`{prefix}` is not a record");
        };
        let mut out = serde_json::Map::new();
        for (field, example) in fields {
            let key = format!("{prefix}.{field}");
            let raw = self
                .get(&key)
                .ok_or_else(|| anyhow!("missing config key `{key}`"))?;
            out.insert(field, parse_like(raw, &example).with_context(|| format!("config key `{key}`"))?);
        }
        Ok(serde_json::from_value(Value::Object(out))?)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key).ok_or_else(|| anyhow!("missing config key `{key}`"))?;
        raw.parse().map_err(|e| anyhow!("config key `{key}` = `{raw}`: {e}"))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(SNAPSHOT_FILE), self.render())?;
        Ok(())
    }
}

fn render(v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::Array(items) => items.iter().map(render).collect::<Result<Vec<_>>>()?.join(","),
        other => bail!("cannot flatten {other}"),
    })
}

fn parse_like(raw: &str, example: &Value) -> Result<Value> {
    Ok(match example {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| anyhow!("`{raw}` is not true/false"))?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|e| anyhow!("`{raw}`: {e}"))?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|e| anyhow!("`{raw}`: {e}"))?),
        Value::Number(_) => {
            let x: f64 = raw.parse().map_err(|e| anyhow!("`{raw}`: {e}"))?;
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .ok_or_else(|| anyhow!("`{raw}` is not finite"))?
        }
        Value::Array(items) => {
            let element = items.first().cloned().unwrap_or(Value::String(String::new()));
            Value::Array(
                raw.split(',')
                    .map(|part| parse_like(part.trim(), &element))
                    .collect::<Result<_>>()?,
            )
        }
        other => bail!("unsupported config value {other}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Sample {
        rate: f64,
        steps: usize,
        name: String,
        flags: [bool; 2],
    }

    fn sample() -> Sample {
        Sample {
            rate: 0.5,
            steps: 10,
            name: "logit".into(),
            flags: [true, false],
        }
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = ExperimentConfig::new("dynamics");
        c.add_defaults("dyn", &sample()).unwrap();
        c.set("dyn.rate", "0.25").unwrap();
        c.set("dyn.flags", "false,true").unwrap();
        let got: Sample = c.extract("dyn", &sample()).unwrap();
        assert_eq!(got.rate, 0.25);
        assert_eq!(got.flags, [false, true]);
        assert!(c.render().contains("dyn.steps = 10\n"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = ExperimentConfig::new("dynamics");
        c.add_defaults("dyn", &sample()).unwrap();
        assert!(c.set("dyn.nope", "1").is_err());
        c.set("dyn.steps", "ten").unwrap();
        assert!(c.extract("dyn", &sample()).is_err());
    }
}
