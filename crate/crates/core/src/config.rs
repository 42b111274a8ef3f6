//! Flat key-value view over JSON configuration text.
//!
//! Nested objects and dotted keys are interchangeable:
//! `{"drift": {"family": "logistic"}}` and `{"drift.family": "logistic"}`
//! both resolve the key `drift.family`.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, Value>,
}

impl ConfigMap {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        Self::from_value(&value)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let Value::Object(_) = value else {
            return Err(Error::Config("top level must be an object".into()));
        };
        let mut entries = BTreeMap::new();
        flatten("", value, &mut entries);
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(Error::Config(format!("`{key}` must be a string, got {other}"))),
        }
    }

    /// Reads a real number. The strings `"inf"` and `"infinity"` map to `+∞`.
    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => value_to_f64(key, v).map(Some),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Number(n)) => {
                n.as_u64().ok_or_else(|| Error::Config(format!("`{key}` must be a nonnegative integer")))
            }
            Some(other) => Err(Error::Config(format!("`{key}` must be an integer, got {other}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(other) => Err(Error::Config(format!("`{key}` must be a boolean, got {other}"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => {
                items.iter().map(|v| value_to_f64(key, v)).collect::<Result<Vec<_>>>().map(Some)
            }
            Some(v) => Ok(Some(vec![value_to_f64(key, v)?])),
        }
    }

    pub fn matrix(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(rows)) => rows
                .iter()
                .map(|row| match row {
                    Value::Array(cells) => cells.iter().map(|v| value_to_f64(key, v)).collect(),
                    other => Err(Error::Config(format!("`{key}` rows must be arrays, got {other}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(Error::Config(format!("`{key}` must be a nested array, got {other}"))),
        }
    }

    /// Nested JSON rendering of every entry, with sorted keys.
    pub fn to_json(&self) -> Value {
        let mut root = serde_json::Map::new();
        for (key, value) in &self.entries {
            insert_dotted(&mut root, key, value.clone());
        }
        Value::Object(root)
    }
}

fn value_to_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Config(format!("`{key}` is not representable as f64"))),
        Value::String(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf") => Ok(f64::INFINITY),
        other => Err(Error::Config(format!("`{key}` must be a number, got {other}"))),
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn insert_dotted(root: &mut serde_json::Map<String, Value>, key: &str, value: Value) {
    match key.split_once('.') {
        None => {
            root.insert(key.to_string(), value);
        }
        Some((head, rest)) => {
            let child = root.entry(head.to_string()).or_insert_with(|| Value::Object(serde_json::Map::new()));
            if !child.is_object() {
                *child = Value::Object(serde_json::Map::new());
            }
            if let Value::Object(map) = child {
                insert_dotted(map, rest, value);
            }
        }
    }
}
