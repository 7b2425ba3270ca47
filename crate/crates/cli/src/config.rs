//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Recognised keys:
//! `epochs`, `batch_size`, `lr`, `seed`, `epsilon`, `label_range`, `tasks`,
//! `hidden_dims` (one value or three), `fusion_dim`, `unimodal_dim`.

use std::collections::BTreeMap;
use std::str::FromStr;

use selfmm_core::trainer::{TaskMask, TrainConfig};

use crate::error::{CliError, CliResult};

pub const KEYS: [&str; 10] =
    ["epochs", "batch_size", "lr", "seed", "epsilon", "label_range", "tasks", "hidden_dims", "fusion_dim", "unimodal_dim"];

/// Parses config text into key/value pairs. Repeated or unknown keys are
/// conflicts.
pub fn parse(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Conflict(format!("config line {}: expected key=value", i + 1)));
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Conflict(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Conflict(format!("config line {}: key `{key}` set twice", i + 1)));
        }
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| CliError::Conflict(format!("config `{key}`: {e}")))
}

/// Applies one setting to `config`.
pub fn apply(config: &mut TrainConfig, key: &str, raw: &str) -> CliResult<()> {
    match key {
        "epochs" => config.epochs = value(key, raw)?,
        "batch_size" => config.batch_size = value(key, raw)?,
        "lr" => config.lr = value(key, raw)?,
        "seed" => config.seed = value(key, raw)?,
        "epsilon" => config.epsilon = value(key, raw)?,
        "label_range" => {
            config.label_range = if raw == "auto" { None } else { Some(value(key, raw)?) };
        }
        "tasks" => config.tasks = TaskMask::parse(raw).map_err(|e| CliError::Conflict(format!("config `tasks`: {e}")))?,
        "hidden_dims" => {
            let dims: Vec<usize> = raw.split(',').map(|p| value(key, p.trim())).collect::<CliResult<_>>()?;
            config.hidden_dims = match dims.as_slice() {
                [h] => [*h; 3],
                [t, a, v] => [*t, *a, *v],
                _ => return Err(CliError::Conflict("config `hidden_dims`: give one or three values".into())),
            };
        }
        "fusion_dim" => config.fusion_dim = value(key, raw)?,
        "unimodal_dim" => config.unimodal_dim = value(key, raw)?,
        other => return Err(CliError::Conflict(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// The fully resolved configuration as key/value pairs.
pub fn snapshot(config: &TrainConfig) -> BTreeMap<String, String> {
    let h = config.hidden_dims;
    [
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("lr", config.lr.to_string()),
        ("seed", config.seed.to_string()),
        ("epsilon", config.epsilon.to_string()),
        ("label_range", config.label_range.map_or("auto".into(), |l| l.to_string())),
        ("tasks", config.tasks.label()),
        ("hidden_dims", format!("{},{},{}", h[0], h[1], h[2])),
        ("fusion_dim", config.fusion_dim.to_string()),
        ("unimodal_dim", config.unimodal_dim.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Renders a snapshot in the config file syntax.
pub fn render(snapshot: &BTreeMap<String, String>) -> String {
    snapshot.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
