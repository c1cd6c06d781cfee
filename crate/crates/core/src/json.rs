//! Canonical JSON: sorted keys, two-space indentation, trailing newline.

use serde::Serialize;

pub fn to_canonical<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}
