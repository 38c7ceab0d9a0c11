//! JSON output helpers: every report carries the tool version and the
//! resolved config snapshot, and floats are trimmed to 9 significant digits.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Round every fractional number in the tree to 9 significant digits.
pub fn round_sig9(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if !n.is_u64() && !n.is_i64() {
                if let Some(x) = n.as_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(sig9(x)) {
                        *value = Value::Number(rounded);
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_sig9),
        Value::Object(map) => map.values_mut().for_each(round_sig9),
        _ => {}
    }
}

pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(8 - mag);
    (x * factor).round() / factor
}

/// Serialize `body` with `tool_version` and `config` fields attached.
pub fn stamped_json<T: Serialize, C: Serialize>(body: &T, config: &C) -> Result<String> {
    let mut value = serde_json::to_value(body).context("serializing output")?;
    let obj = value
        .as_object_mut()
        .context("output must be a JSON object")?;
    obj.insert("tool_version".into(), Value::String(TOOL_VERSION.into()));
    obj.insert(
        "config".into(),
        serde_json::to_value(config).context("serializing config")?,
    );
    let mut value = Value::Object(std::mem::take(obj));
    round_sig9(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A plain JSON object from key/value pairs.
pub fn object(pairs: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}
