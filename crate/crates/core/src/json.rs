//! Canonical JSON text: sorted keys, two-space indentation, scalar-only
//! arrays on one line, floats with six decimals unless that would lose bits.

use serde_json::{Number, Value};

/// Formats a float with six decimals, falling back to the shortest exact
/// representation when six decimals would not round-trip.
pub fn format_float(v: f64) -> String {
    let fixed = format!("{v:.6}");
    if fixed.parse::<f64>().ok() == Some(v) {
        fixed
    } else {
        format!("{v}")
    }
}

/// Float JSON value; non-finite inputs map to `null`.
pub fn float(v: f64) -> Value {
    Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn to_canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.iter().all(is_scalar) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, depth);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    indent(out, depth + 1);
                    write_value(out, item, depth + 1);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                indent(out, depth);
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[key.as_str()], depth + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

fn write_number(out: &mut String, n: &Number) {
    if let Some(u) = n.as_u64() {
        out.push_str(&u.to_string());
    } else if let Some(i) = n.as_i64() {
        out.push_str(&i.to_string());
    } else if let Some(f) = n.as_f64() {
        out.push_str(&format_float(f));
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn six_decimals_when_exact() {
        assert_eq!(format_float(100.0), "100.000000");
        assert_eq!(format_float(0.5), "0.500000");
        assert_eq!(format_float(0.1), "0.100000");
    }

    #[test]
    fn falls_back_to_shortest_exact() {
        let v = 0.123_456_789;
        let s = format_float(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert_eq!(s, "0.123456789");
    }

    #[test]
    fn layout_is_sorted_and_stable() {
        let v = json!({"b": [1, 2], "a": {"z": "x", "c": [{"k": true}]}});
        let text = to_canonical_string(&v);
        assert_eq!(
            text,
            "{\n  \"a\": {\n    \"c\": [\n      {\n        \"k\": true\n      }\n    ],\n    \"z\": \"x\"\n  },\n  \"b\": [1, 2]\n}\n"
        );
        let reparsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(to_canonical_string(&reparsed), text);
    }
}
