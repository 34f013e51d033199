//! Run summaries. Each run writes `headline.json` with its key numbers;
//! `summary.json` is derived from the headline, the resolved config and
//! the files in the run directory, so regenerating it from unchanged
//! artifacts reproduces it byte for byte.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::SNAPSHOT_FILE;

pub const HEADLINE_FILE: &str = "headline.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn write_headline(dir: &Path, headline: &Value) -> Result<()> {
    std::fs::write(dir.join(HEADLINE_FILE), serde_json::to_string_pretty(headline)? + "\n")?;
    Ok(())
}

fn resolved_config(dir: &Path) -> Result<Option<Value>> {
    let path = dir.join(SNAPSHOT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let mut map = serde_json::Map::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            map.insert(k.to_string(), Value::String(v.to_string()));
        }
    }
    Ok(Some(Value::Object(map)))
}

/// Builds `summary.json` for the run in `dir` and returns it. Runs without
/// a headline are marked incomplete.
pub fn emit_report(dir: &Path) -> Result<Value> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == SUMMARY_FILE || !entry.file_type()?.is_file() {
            continue;
        }
        files.push((name, entry.metadata()?.len()));
    }
    files.sort();
    let headline_path = dir.join(HEADLINE_FILE);
    let headline: Option<Value> = if headline_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&headline_path)?)?)
    } else {
        None
    };
    let config = resolved_config(dir)?;
    let seeds = headline
        .as_ref()
        .and_then(|h| h.get("seeds").cloned())
        .or_else(|| {
            config
                .as_ref()
                .and_then(|c| c.get("seed").cloned())
                .map(|s| Value::Array(vec![s]))
        })
        .unwrap_or(Value::Null);
    let summary = json!({
        "complete": headline.is_some() && config.is_some(),
        "headline": headline.unwrap_or(Value::Null),
        "config": config.unwrap_or(Value::Null),
        "seeds": seeds,
        "files": files
            .iter()
            .map(|(name, bytes)| json!({"name": name, "bytes": bytes}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
