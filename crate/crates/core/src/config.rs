//! Dotted-path edits on JSON configuration trees.

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Sets `path` (dot-separated object keys, numeric segments index arrays) to `value`,
/// creating intermediate objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Config("empty override key".into()));
    }
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(part.to_string(), value);
                    return Ok(());
                }
                m.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(a) => {
                let k: usize = part.parse().map_err(|_| {
                    Error::Config(format!("`{path}`: `{part}` is not an array index"))
                })?;
                let len = a.len();
                let slot = a.get_mut(k).ok_or_else(|| {
                    Error::Config(format!("`{path}`: index {k} out of range ({len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            other => {
                return Err(Error::Config(format!(
                    "`{path}`: cannot descend into {other}"
                )))
            }
        };
    }
    unreachable!("the loop returns on the last segment")
}

/// Parses `key=value`; the value is read as JSON and falls back to a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sets_nested_and_indexed_keys() {
        let mut v = json!({"a": {"b": 1}, "xs": [1, 2]});
        set_path(&mut v, "a.b", json!(5)).unwrap();
        set_path(&mut v, "a.c.d", json!("x")).unwrap();
        set_path(&mut v, "xs.1", json!(9)).unwrap();
        assert_eq!(v, json!({"a": {"b": 5, "c": {"d": "x"}}, "xs": [1, 9]}));
        assert!(set_path(&mut v, "a.b.c", json!(1)).is_err());
        assert!(set_path(&mut v, "xs.7", json!(1)).is_err());
    }

    #[test]
    fn override_values_parse_as_json_or_string() {
        assert_eq!(
            parse_override("a.b=0.5").unwrap(),
            ("a.b".into(), json!(0.5))
        );
        assert_eq!(
            parse_override("m=logreg").unwrap(),
            ("m".into(), json!("logreg"))
        );
        assert_eq!(parse_override("h=[16,32]").unwrap().1, json!([16, 32]));
        assert!(parse_override("nokey").is_err());
    }
}
