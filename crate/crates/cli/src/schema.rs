//! Minimal JSON-schema checker covering the keywords the report schema uses:
//! `type` (name or list of names), `properties`, `required`,
//! `additionalProperties` (boolean or schema), `items`, `enum`, `oneOf`, and
//! local `$ref` into `$defs`.

use serde_json::Value;

/// Validate `instance` against `schema`. Returns every violation found,
/// each prefixed with a JSON-pointer-style path; empty means valid.
pub fn validate(schema: &Value, instance: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    Checker { root: schema }.check(schema, instance, "$", &mut errors);
    errors
}

struct Checker<'a> {
    root: &'a Value,
}

impl<'a> Checker<'a> {
    /// Resolve a local reference of the form `#/$defs/name` (or any
    /// `#/a/b/...` pointer into the root document).
    fn resolve(&self, reference: &str) -> Option<&'a Value> {
        let pointer = reference.strip_prefix('#')?;
        self.root.pointer(pointer)
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                "integer"
            } else {
                "number"
            }
        }
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn matches_type(wanted: &str, v: &Value) -> bool {
    match wanted {
        // every integer is a number; 2.0 also counts as an integer
        "number" => matches!(v, Value::Number(_)),
        "integer" => match v {
            Value::Number(n) => {
                n.is_u64() || n.is_i64() || n.as_f64().is_some_and(|f| f.fract() == 0.0)
            }
            _ => false,
        },
        other => other == type_name(v),
    }
}

impl Checker<'_> {
    fn check(&self, schema: &Value, instance: &Value, path: &str, errors: &mut Vec<String>) {
        let Some(obj) = schema.as_object() else {
            errors.push(format!("{path}: schema node is not an object"));
            return;
        };

        if let Some(reference) = obj.get("$ref").and_then(|r| r.as_str()) {
            match self.resolve(reference) {
                Some(target) => self.check(target, instance, path, errors),
                None => errors.push(format!("{path}: unresolvable $ref '{reference}'")),
            }
            return;
        }

        if let Some(alternatives) = obj.get("oneOf").and_then(|o| o.as_array()) {
            let matched = alternatives.iter().any(|alt| {
                let mut alt_errors = Vec::new();
                self.check(alt, instance, path, &mut alt_errors);
                alt_errors.is_empty()
            });
            if !matched {
                errors.push(format!("{path}: value matches none of the oneOf alternatives"));
            }
            return;
        }

        if let Some(ty) = obj.get("type") {
            let names: Vec<&str> = match ty {
                Value::String(s) => vec![s.as_str()],
                Value::Array(a) => a.iter().filter_map(|v| v.as_str()).collect(),
                _ => vec![],
            };
            if !names.iter().any(|n| matches_type(n, instance)) {
                errors.push(format!(
                    "{path}: expected type {}, got {}",
                    names.join("|"),
                    type_name(instance)
                ));
                return;
            }
        }

        if let Some(allowed) = obj.get("enum").and_then(|e| e.as_array()) {
            if !allowed.contains(instance) {
                errors.push(format!("{path}: value {instance} not in enum"));
            }
        }

        if let Value::Object(fields) = instance {
            if let Some(required) = obj.get("required").and_then(|r| r.as_array()) {
                for name in required.iter().filter_map(|v| v.as_str()) {
                    if !fields.contains_key(name) {
                        errors.push(format!("{path}: missing required property '{name}'"));
                    }
                }
            }
            let props = obj.get("properties").and_then(|p| p.as_object());
            for (key, value) in fields {
                let child_path = format!("{path}.{key}");
                if let Some(prop_schema) = props.and_then(|p| p.get(key)) {
                    self.check(prop_schema, value, &child_path, errors);
                } else {
                    match obj.get("additionalProperties") {
                        Some(Value::Bool(false)) => {
                            errors.push(format!("{path}: unexpected property '{key}'"));
                        }
                        Some(extra_schema @ Value::Object(_)) => {
                            self.check(extra_schema, value, &child_path, errors);
                        }
                        _ => {}
                    }
                }
            }
        }

        if let (Value::Array(elements), Some(item_schema)) = (instance, obj.get("items")) {
            for (i, element) in elements.iter().enumerate() {
                self.check(item_schema, element, &format!("{path}[{i}]"), errors);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_matching_object() {
        let schema = json!({
            "type": "object",
            "required": ["name", "score"],
            "additionalProperties": false,
            "properties": {
                "name": {"type": "string"},
                "score": {"type": "number"},
                "tags": {"type": "array", "items": {"type": "string"}}
            }
        });
        let ok = json!({"name": "a", "score": 1, "tags": ["x"]});
        assert!(validate(&schema, &ok).is_empty());
    }

    #[test]
    fn reports_missing_required_and_unknown_keys() {
        let schema = json!({
            "type": "object",
            "required": ["name"],
            "additionalProperties": false,
            "properties": {"name": {"type": "string"}}
        });
        let bad = json!({"extra": 1});
        let errors = validate(&schema, &bad);
        assert!(errors.iter().any(|e| e.contains("missing required property 'name'")));
        assert!(errors.iter().any(|e| e.contains("unexpected property 'extra'")));
    }

    #[test]
    fn nullable_types_accept_null() {
        let schema = json!({"type": ["object", "null"], "properties": {}});
        assert!(validate(&schema, &json!(null)).is_empty());
        assert!(validate(&schema, &json!({})).is_empty());
        assert!(!validate(&schema, &json!(3)).is_empty());
    }

    #[test]
    fn integer_valued_float_counts_as_integer() {
        let schema = json!({"type": "integer"});
        assert!(validate(&schema, &json!(2.0)).is_empty());
        assert!(!validate(&schema, &json!(2.5)).is_empty());
    }

    #[test]
    fn additional_properties_schema_applies_to_map_values() {
        let schema = json!({
            "type": "object",
            "additionalProperties": {"type": "number"}
        });
        assert!(validate(&schema, &json!({"a": 1.5, "b": 2})).is_empty());
        let errors = validate(&schema, &json!({"a": "text"}));
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("$.a"));
    }

    #[test]
    fn enum_restricts_values() {
        let schema = json!({"type": "string", "enum": ["kl", "llr_g"]});
        assert!(validate(&schema, &json!("kl")).is_empty());
        assert!(!validate(&schema, &json!("other")).is_empty());
    }

    #[test]
    fn array_items_are_checked_with_index_paths() {
        let schema = json!({"type": "array", "items": {"type": "string"}});
        let errors = validate(&schema, &json!(["ok", 3]));
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("$[1]"));
    }

    #[test]
    fn local_refs_resolve_into_defs() {
        let schema = json!({
            "$defs": {"prob": {"type": "number"}},
            "type": "object",
            "properties": {"p": {"$ref": "#/$defs/prob"}}
        });
        assert!(validate(&schema, &json!({"p": 0.5})).is_empty());
        let errors = validate(&schema, &json!({"p": "half"}));
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("$.p"));
    }

    #[test]
    fn dangling_ref_is_an_error() {
        let schema = json!({"$ref": "#/$defs/missing"});
        let errors = validate(&schema, &json!(1));
        assert!(errors[0].contains("unresolvable"));
    }

    #[test]
    fn one_of_admits_exactly_the_alternatives() {
        let schema = json!({"oneOf": [{"type": "null"}, {"type": "number"}]});
        assert!(validate(&schema, &json!(null)).is_empty());
        assert!(validate(&schema, &json!(1.5)).is_empty());
        assert!(!validate(&schema, &json!("no")).is_empty());
    }
}
