//! Canonical JSON: UTF-8, object keys sorted lexicographically, no
//! insignificant whitespace. Digests and golden comparisons rely on this
//! being byte-stable.

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` in canonical form.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let value = serde_json::to_value(value)?;
    Ok(value_to_string(&value).into_bytes())
}

/// Re-encodes an arbitrary JSON document in canonical form.
pub fn canonicalize(raw: &[u8]) -> serde_json::Result<Vec<u8>> {
    let value: Value = serde_json::from_slice(raw)?;
    Ok(value_to_string(&value).into_bytes())
}

pub fn value_to_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            // Sort explicitly: serde_json may be built with `preserve_order`.
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}
