//! Layered run configuration: built-in defaults, then `--config FILE`, then
//! command flags, then `--set key=value` overrides.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Usage;

pub fn load<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: Map<String, Value>,
    sets: &[String],
) -> anyhow::Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file_v: Value = serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        merge(&mut v, file_v);
    }
    merge(&mut v, Value::Object(flags));
    for s in sets {
        apply_set(&mut v, s)?;
    }
    serde_json::from_value(v).map_err(|e| Usage(format!("invalid configuration: {e}")).into())
}

/// Recursive object merge; non-object values replace.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=VALUE`; the value is read as JSON when it parses, else as a string.
pub fn apply_set(v: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Usage(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = v;
    for part in key.split('.') {
        if part.is_empty() {
            return Err(Usage(format!("empty path segment in `{key}`")).into());
        }
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Usage(format!("`{key}` descends into a non-object")))?;
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *slot = value;
    Ok(())
}

/// Collects flags that were given on the command line.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn opt<T: Serialize>(mut self, key: &str, v: Option<T>) -> Self {
        if let Some(v) = v {
            self.0
                .insert(key.into(), serde_json::to_value(v).expect("plain flag value"));
        }
        self
    }

    pub fn list<T: Serialize>(self, key: &str, v: Vec<T>) -> Self {
        let v = (!v.is_empty()).then_some(v);
        self.opt(key, v)
    }

    pub fn set(self, key: &str, v: bool) -> Self {
        self.opt(key, v.then_some(true))
    }

    pub fn into_map(self) -> Map<String, Value> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_set() {
        let mut v = json!({"attn": {"R": 2, "P": 4}});
        apply_set(&mut v, "attn.R=4").unwrap();
        apply_set(&mut v, "name=lwa").unwrap();
        apply_set(&mut v, "grid=[1,2]").unwrap();
        assert_eq!(v, json!({"attn": {"R": 4, "P": 4}, "name": "lwa", "grid": [1, 2]}));
        assert!(apply_set(&mut v, "name.x=1").is_err());
        assert!(apply_set(&mut v, "novalue").is_err());
    }

    #[test]
    fn merge_keeps_unset_fields() {
        let mut v = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut v, json!({"b": {"c": 5}}));
        assert_eq!(v, json!({"a": 1, "b": {"c": 5, "d": 3}}));
    }
}
