use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

const SECTIONS: [&str; 15] = [
    "ingest",
    "preprocess",
    "dedupe",
    "featurize",
    "train",
    "predict",
    "evaluate",
    "kappa",
    "merge-kappa",
    "crowd-score",
    "crowd-aggregate",
    "crowd-simulate",
    "lda",
    "gender",
    "export-labels",
];

/// Section `name` of a run config file: a JSON object keyed by subcommand.
pub fn section(path: Option<&Path>, name: &str) -> Result<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(mut map) = doc else { bail!("{}: run config must be a JSON object", path.display()) };
    if let Some(unknown) = map.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        bail!("{}: unknown config section {unknown:?}", path.display());
    }
    Ok(map.remove(name))
}

fn is_unset(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => true,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Overlays the flags that were given onto the config section. Unknown
/// config keys are rejected by `T`'s own `deny_unknown_fields`.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: T, section: Option<Value>, name: &str) -> Result<T> {
    let Some(section) = section else { return Ok(flags) };
    let Value::Object(mut merged) = section else { bail!("config section {name:?} must be a JSON object") };
    let Value::Object(given) = serde_json::to_value(&flags)? else { unreachable!("flag structs serialize to objects") };
    for (k, v) in given {
        if !is_unset(&v) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("config section {name:?}"))
}

