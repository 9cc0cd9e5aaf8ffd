//! Validator for the JSON-schema keywords the shipped schemas use.

use serde_json::Value;

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|x| x.fract() == 0.0),
        _ => panic!("unsupported type {t}"),
    }
}

/// Violations of `schema` by `v`, as JSON-pointer-ish paths.
pub fn validate(schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    let s = schema.as_object().expect("schema must be an object");
    for key in s.keys() {
        assert!(
            matches!(
                key.as_str(),
                "$schema" | "title" | "type" | "enum" | "required" | "properties" | "additionalProperties" | "items"
                    | "minItems" | "maxItems" | "minimum" | "maximum" | "exclusiveMinimum"
            ),
            "unsupported keyword {key}"
        );
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            errors.push(format!("{path}: expected type {t}, got {v}"));
            return;
        }
    }
    if let Some(Value::Array(opts)) = s.get("enum") {
        if !opts.contains(v) {
            errors.push(format!("{path}: {v} not in {opts:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if s.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            errors.push(format!("{path}: {x} below minimum"));
        }
        if s.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            errors.push(format!("{path}: {x} above maximum"));
        }
        if s.get("exclusiveMinimum").and_then(Value::as_f64).is_some_and(|m| x <= m) {
            errors.push(format!("{path}: {x} not above exclusive minimum"));
        }
    }
    if let Value::Object(obj) = v {
        if let Some(Value::Array(req)) = s.get("required") {
            for r in req {
                if !obj.contains_key(r.as_str().unwrap()) {
                    errors.push(format!("{path}: missing {r}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => validate(sub, child, &format!("{path}/{k}"), errors),
                None => {
                    if s.get("additionalProperties") == Some(&Value::Bool(false)) {
                        errors.push(format!("{path}: unexpected property {k}"));
                    }
                }
            }
        }
    }
    if let Value::Array(items) = v {
        if s.get("minItems").and_then(Value::as_u64).is_some_and(|m| (items.len() as u64) < m) {
            errors.push(format!("{path}: fewer than minItems"));
        }
        if s.get("maxItems").and_then(Value::as_u64).is_some_and(|m| (items.len() as u64) > m) {
            errors.push(format!("{path}: more than maxItems"));
        }
        if let Some(sub) = s.get("items") {
            for (i, it) in items.iter().enumerate() {
                validate(sub, it, &format!("{path}/{i}"), errors);
            }
        }
    }
}

pub fn check(schema_file: &str, doc: &Value) -> Vec<String> {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema_file);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    let mut errors = Vec::new();
    validate(&schema, doc, "", &mut errors);
    errors
}
