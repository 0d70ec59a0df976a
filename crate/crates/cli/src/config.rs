//! Loading run configs: a JSON or TOML file, then flag overrides, then a
//! typed pass that reports failures by JSON pointer.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

pub fn load_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if is_toml {
        toml::from_str(&text).map_err(|e| CliError::config("", format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::config("", format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::config("", "config root must be a table"));
    }
    Ok(value)
}

/// Parses a flag value as JSON, falling back to a bare string.
pub fn parse_flag_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `dotted.key.path` in `root`, creating tables on the way.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config("", format!("malformed override key {key:?}")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let pointer = format!("/{}", parts[..i].join("/"));
        let Value::Object(map) = cur else {
            return Err(CliError::config(pointer, "override descends into a non-table"));
        };
        if i == parts.len() - 1 {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last part")
}

/// `key=value` from `--set`.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config("", format!("--set expects key=value, got {assignment:?}")))?;
    set_path(root, key.trim(), parse_flag_value(raw.trim()))
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

pub fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer_of(e.path());
        CliError::config(pointer, e.into_inner().to_string())
    })
}

/// Missing inputs surface as store errors, like any other failed read.
pub fn require_exists(path: &Path) -> Result<()> {
    fs::metadata(path).map_err(|e| numlens::Error::Store {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
