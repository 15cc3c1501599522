//! Runtime values and declared types.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A handler-language value. Records and lists have value semantics: assignment copies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Value>),
    Record(BTreeMap<String, Value>),
}

/// Declared types. `Null` inhabits every one of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclaredType {
    Int,
    Bool,
    Str,
    Record,
    List,
    Any,
}

impl DeclaredType {
    pub const CONCRETE: [DeclaredType; 5] = [
        DeclaredType::Int,
        DeclaredType::Str,
        DeclaredType::Bool,
        DeclaredType::Record,
        DeclaredType::List,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            DeclaredType::Int => "int",
            DeclaredType::Bool => "bool",
            DeclaredType::Str => "str",
            DeclaredType::Record => "record",
            DeclaredType::List => "list",
            DeclaredType::Any => "any",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "int" => DeclaredType::Int,
            "bool" => DeclaredType::Bool,
            "str" => DeclaredType::Str,
            "record" => DeclaredType::Record,
            "list" => DeclaredType::List,
            "any" => DeclaredType::Any,
            _ => return None,
        })
    }

    /// Exact match, with `any` compatible with everything.
    pub fn compatible(self, other: DeclaredType) -> bool {
        self == other || self == DeclaredType::Any || other == DeclaredType::Any
    }

    /// Whether a runtime value may be stored under this declared type.
    pub fn admits(self, value: &Value) -> bool {
        match value.kind() {
            None => true,
            Some(k) => self == DeclaredType::Any || self == k,
        }
    }

    /// The manufactured default values for this type: one for a concrete type, one per
    /// concrete type for `any`.
    pub fn defaults(self) -> Vec<Value> {
        match self {
            DeclaredType::Any => Self::CONCRETE.iter().flat_map(|t| t.defaults()).collect(),
            DeclaredType::Int => vec![Value::Int(0)],
            DeclaredType::Bool => vec![Value::Bool(false)],
            DeclaredType::Str => vec![Value::Str(String::new())],
            DeclaredType::Record => vec![Value::Record(BTreeMap::new())],
            DeclaredType::List => vec![Value::List(Vec::new())],
        }
    }
}

impl fmt::Display for DeclaredType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn record<K: Into<String>>(fields: impl IntoIterator<Item = (K, Value)>) -> Self {
        Value::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// The declared type this value inhabits most precisely; `None` for `Null`.
    pub fn kind(&self) -> Option<DeclaredType> {
        Some(match self {
            Value::Null => return None,
            Value::Bool(_) => DeclaredType::Bool,
            Value::Int(_) => DeclaredType::Int,
            Value::Str(_) => DeclaredType::Str,
            Value::List(_) => DeclaredType::List,
            Value::Record(_) => DeclaredType::Record,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind().map(DeclaredType::keyword).unwrap_or("null")
    }

    /// Text rendering used by `str()`, string concatenation and response bodies.
    pub fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            other => other.literal(),
        }
    }

    /// Source-literal rendering; parses back to an equal value.
    pub fn literal(&self) -> String {
        let mut out = String::new();
        self.write_literal(&mut out);
        out
    }

    fn write_literal(&self, out: &mut String) {
        match self {
            Value::Null => out.push_str("null"),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Str(s) => quote_into(s, out),
            Value::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write_literal(out);
                }
                out.push(']');
            }
            Value::Record(fields) => {
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    if is_identifier(k) {
                        out.push_str(k);
                    } else {
                        quote_into(k, out);
                    }
                    out.push_str(": ");
                    v.write_literal(out);
                }
                out.push('}');
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

pub(crate) fn quote_into(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    quote_into(s, &mut out);
    out
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !crate::lexer::is_keyword(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_inhabits_every_type() {
        for t in DeclaredType::CONCRETE.iter().chain([DeclaredType::Any].iter()) {
            assert!(t.admits(&Value::Null));
        }
        assert!(!DeclaredType::Int.admits(&Value::str("x")));
        assert!(DeclaredType::Any.admits(&Value::str("x")));
    }

    #[test]
    fn compatibility_is_exact_or_any() {
        assert!(DeclaredType::Int.compatible(DeclaredType::Int));
        assert!(!DeclaredType::Int.compatible(DeclaredType::Str));
        assert!(DeclaredType::Any.compatible(DeclaredType::Str));
        assert!(DeclaredType::Record.compatible(DeclaredType::Any));
    }

    #[test]
    fn any_has_one_default_per_concrete_type() {
        assert_eq!(DeclaredType::Any.defaults().len(), 5);
        assert_eq!(DeclaredType::Int.defaults(), vec![Value::Int(0)]);
    }

    #[test]
    fn literal_rendering() {
        let v = Value::record([
            ("name", Value::str("a\"b")),
            ("tags", Value::List(vec![Value::Int(1), Value::Null])),
        ]);
        assert_eq!(v.literal(), r#"{name: "a\"b", tags: [1, null]}"#);
        assert_eq!(Value::str("hi").render(), "hi");
    }
}
