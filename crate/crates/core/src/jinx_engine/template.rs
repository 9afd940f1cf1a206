//! `{{ expr }}` substitution with dotted member access. No loops, filters or
//! conditionals; everything outside a substitution site passes through as-is.

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use super::{Bindings, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateError {
    #[error("unbound variable `{name}` at offset {offset}")]
    UnboundVariable { name: String, offset: usize },
    #[error("cannot resolve `{path}` at offset {offset}: {reason}")]
    BadPath {
        path: String,
        offset: usize,
        reason: String,
    },
    #[error("unsupported template expression `{expr}` at offset {offset}")]
    BadExpression { expr: String, offset: usize },
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_path(expr: &str) -> Option<Vec<&str>> {
    let segments: Vec<&str> = expr.split('.').collect();
    let (root, rest) = segments.split_first()?;
    if !is_ident(root) {
        return None;
    }
    rest.iter()
        .all(|s| is_ident(s) || (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())))
        .then_some(segments)
}

fn descend<'a>(mut cur: &'a Json, path: &[&str], full: &str, offset: usize) -> Result<&'a Json, TemplateError> {
    for seg in path {
        let next = match cur {
            Json::Object(map) => map.get(*seg),
            Json::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            _ => {
                return Err(TemplateError::BadPath {
                    path: full.to_string(),
                    offset,
                    reason: format!("`{seg}` accessed on a non-structured value"),
                })
            }
        };
        cur = next.ok_or_else(|| TemplateError::BadPath {
            path: full.to_string(),
            offset,
            reason: format!("no member `{seg}`"),
        })?;
    }
    Ok(cur)
}

fn evaluate(expr: &str, offset: usize, bindings: &Bindings) -> Result<Value, TemplateError> {
    let segments = parse_path(expr).ok_or_else(|| TemplateError::BadExpression {
        expr: expr.to_string(),
        offset,
    })?;
    let root = bindings.get(segments[0]).ok_or_else(|| TemplateError::UnboundVariable {
        name: segments[0].to_string(),
        offset,
    })?;
    if segments.len() == 1 {
        return Ok(root.clone());
    }
    let data = match root {
        Value::Data(j) => j,
        Value::Output { structured: Some(j), .. } => j,
        Value::Output { structured: None, .. } => {
            return Err(TemplateError::BadPath {
                path: expr.to_string(),
                offset,
                reason: format!("`{}` is plain text", segments[0]),
            })
        }
    };
    descend(data, &segments[1..], expr, offset).map(|j| Value::Data(j.clone()))
}

/// If the template is exactly one substitution site, return its value
/// unstringified so structured data survives being passed along.
pub fn evaluate_single(template: &str, bindings: &Bindings) -> Option<Result<Value, TemplateError>> {
    let t = template.trim();
    let inner = t.strip_prefix("{{")?.strip_suffix("}}")?;
    if inner.contains("{{") || inner.contains("}}") {
        return None;
    }
    let offset = template.find("{{").unwrap_or(0);
    Some(evaluate(inner.trim(), offset, bindings))
}

pub fn render_template(body: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    let mut base = 0;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            break;
        };
        out.push_str(&rest[..open]);
        let offset = base + open;
        let value = evaluate(after[..close].trim(), offset, bindings)?;
        out.push_str(&value.display());
        let consumed = open + 2 + close + 2;
        base += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn b(pairs: &[(&str, Value)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn substitutes_identifier() {
        let out = render_template("echo {{ msg }}", &b(&[("msg", Value::Data(json!("hi")))])).unwrap();
        assert_eq!(out, "echo hi");
    }

    #[test]
    fn dotted_access() {
        let out = render_template("{{ a.b }}", &b(&[("a", Value::Data(json!({"b": 3})))])).unwrap();
        assert_eq!(out, "3");
        let out = render_template("{{a.items.1}}", &b(&[("a", Value::Data(json!({"items": [1, "two"]})))])).unwrap();
        assert_eq!(out, "two");
    }

    #[test]
    fn unbound_reports_name_and_position() {
        let err = render_template("x {{ missing }}", &Bindings::new()).unwrap_err();
        assert_eq!(
            err,
            TemplateError::UnboundVariable {
                name: "missing".into(),
                offset: 2
            }
        );
    }

    #[test]
    fn dotted_into_scalar_is_bad_path() {
        let err = render_template("{{ a.b }}", &b(&[("a", Value::Data(json!(3)))])).unwrap_err();
        assert!(matches!(err, TemplateError::BadPath { .. }));
        let err = render_template("{{ a.b }}", &b(&[("a", Value::text("plain"))])).unwrap_err();
        assert!(matches!(err, TemplateError::BadPath { .. }));
    }

    #[test]
    fn step_output_structured_last_line() {
        let v = Value::from_output("log line\n{\"n\": 7}");
        let bs = b(&[("s", v)]);
        assert_eq!(render_template("{{ s.n }}", &bs).unwrap(), "7");
        assert_eq!(render_template("{{ s }}", &bs).unwrap(), "log line\n{\"n\": 7}");
    }

    #[test]
    fn verbatim_passthrough() {
        let bs = Bindings::new();
        assert_eq!(render_template("no sites { here }", &bs).unwrap(), "no sites { here }");
        assert_eq!(render_template("open {{ never closed", &bs).unwrap(), "open {{ never closed");
        assert!(matches!(
            render_template("{{ a + b }}", &bs),
            Err(TemplateError::BadExpression { .. })
        ));
    }

    #[test]
    fn single_site_keeps_structure() {
        let bs = b(&[("xs", Value::Data(json!([1, 2])))]);
        assert_eq!(evaluate_single(" {{ xs }} ", &bs).unwrap().unwrap(), Value::Data(json!([1, 2])));
        assert!(evaluate_single("a {{ xs }}", &bs).is_none());
    }
}
