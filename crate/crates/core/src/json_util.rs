//! JSON helpers shared across the pipeline: canonical forms, numeric-aware
//! equality, leaf flattening and value-containment scans.

use serde_json::{Map, Number, Value};
use std::collections::VecDeque;

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

/// Rewrites numbers so that `150000` and `150000.0` share one representation.
/// Object keys are already ordered because `serde_json::Map` is a `BTreeMap`.
pub fn canonical_value(value: &Value) -> Value {
    match value {
        Value::Number(n) => Value::Number(canonical_number(n)),
        Value::Array(items) => Value::Array(items.iter().map(canonical_value).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), canonical_value(v)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn canonical_number(n: &Number) -> Number {
    if n.is_i64() || n.is_u64() {
        return n.clone();
    }
    match n.as_f64() {
        Some(f) if f.is_finite() && f.fract() == 0.0 && f.abs() < MAX_EXACT_INT => {
            Number::from(f as i64)
        }
        _ => n.clone(),
    }
}

/// Compact serialization of [`canonical_value`].
pub fn canonical_string(value: &Value) -> String {
    serde_json::to_string(&canonical_value(value)).expect("json values always serialize")
}

/// Structural equality with numbers compared numerically.
pub fn json_eq(a: &Value, b: &Value) -> bool {
    canonical_value(a) == canonical_value(b)
}

/// String-normalized form of a scalar: numbers in canonical form, strings verbatim.
pub fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::Null => Some("null".to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(canonical_number(n).to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// All scalar leaves in depth-first document order.
pub fn leaves(value: &Value) -> Vec<&Value> {
    let mut out = Vec::new();
    collect_leaves(value, &mut out);
    out
}

fn collect_leaves<'a>(value: &'a Value, out: &mut Vec<&'a Value>) {
    match value {
        Value::Array(items) => items.iter().for_each(|v| collect_leaves(v, out)),
        Value::Object(map) => map.values().for_each(|v| collect_leaves(v, out)),
        scalar => out.push(scalar),
    }
}

fn subtrees<'a>(value: &'a Value, out: &mut Vec<&'a Value>) {
    out.push(value);
    match value {
        Value::Array(items) => items.iter().for_each(|v| subtrees(v, out)),
        Value::Object(map) => map.values().for_each(|v| subtrees(v, out)),
        _ => {}
    }
}

/// Whether `needle` can be read off `haystack`.
///
/// Scalars match when their string-normalized forms agree (so `53` is found
/// in `{"id": "53"}` and `150000.0` in `{"salary": 150000}`). Composite needles
/// match an equal subtree, or failing that, every one of their leaves must be
/// contained.
pub fn value_contained(needle: &Value, haystack: &Value) -> bool {
    match needle {
        Value::Array(_) | Value::Object(_) => {
            let mut trees = Vec::new();
            subtrees(haystack, &mut trees);
            if trees.iter().any(|t| json_eq(t, needle)) {
                return true;
            }
            let needle_leaves = leaves(needle);
            !needle_leaves.is_empty() && needle_leaves.iter().all(|l| value_contained(l, haystack))
        }
        scalar => {
            let Some(target) = scalar_text(scalar) else {
                return false;
            };
            leaves(haystack)
                .iter()
                .filter_map(|l| scalar_text(l))
                .any(|t| t == target)
        }
    }
}

/// Breadth-first search for the first value stored under `key`, descending
/// into arrays and objects. Top-level keys win over nested ones.
pub fn find_key<'a>(value: &'a Value, key: &str) -> Option<&'a Value> {
    let mut queue = VecDeque::from([value]);
    while let Some(node) = queue.pop_front() {
        match node {
            Value::Object(map) => {
                if let Some(v) = map.get(key) {
                    return Some(v);
                }
                queue.extend(map.values());
            }
            Value::Array(items) => queue.extend(items.iter()),
            _ => {}
        }
    }
    None
}

/// Every object key appearing anywhere in the value.
pub fn all_keys(value: &Value) -> Vec<&str> {
    let mut out = Vec::new();
    let mut queue = VecDeque::from([value]);
    while let Some(node) = queue.pop_front() {
        match node {
            Value::Object(map) => {
                for (k, v) in map {
                    out.push(k.as_str());
                    queue.push_back(v);
                }
            }
            Value::Array(items) => queue.extend(items.iter()),
            _ => {}
        }
    }
    out
}

pub fn object(pairs: impl IntoIterator<Item = (String, Value)>) -> Value {
    Value::Object(pairs.into_iter().collect::<Map<String, Value>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn integer_valued_floats_canonicalize_to_integers() {
        assert!(json_eq(&json!(150000), &json!(150000.0)));
        assert!(!json_eq(&json!(1.5), &json!(1)));
        assert_eq!(canonical_string(&json!({"b": 2.0, "a": 1})), r#"{"a":1,"b":2}"#);
    }

    #[test]
    fn containment_is_string_normalized() {
        let out = json!({"results": [{"id": 278, "title": "The Shawshank Redemption"}]});
        assert!(value_contained(&json!(278), &out));
        assert!(value_contained(&json!("278"), &out));
        assert!(value_contained(&json!(278.0), &out));
        assert!(!value_contained(&json!("the shawshank redemption"), &out));
        assert!(value_contained(&json!({"id": 278.0, "title": "The Shawshank Redemption"}), &out));
        assert!(!value_contained(&json!(279), &out));
    }

    #[test]
    fn find_key_prefers_shallow_matches() {
        let v = json!({"keywords": [{"id": 378}], "id": 278});
        assert_eq!(find_key(&v, "id"), Some(&json!(278)));
        assert_eq!(find_key(&json!([{"a": {"b": 3}}]), "b"), Some(&json!(3)));
        assert_eq!(find_key(&v, "missing"), None);
    }
}
