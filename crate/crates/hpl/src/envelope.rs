//! HTTP request/response envelopes and route matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ast::Program;
use crate::value::Value;

/// Bodies are carried as bytes but serialized as (lossy) UTF-8 text; every body produced
/// or consumed by this harness is UTF-8.
mod body_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub request_id: String,
    pub method: String,
    /// Path including any query string.
    pub path: String,
    pub headers: Vec<(String, String)>,
    #[serde(with = "body_text")]
    pub body: Vec<u8>,
    pub session_id: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub received_at_ms: u64,
}

impl RequestEnvelope {
    pub fn new(request_id: impl Into<String>, method: &str, path: &str) -> Self {
        RequestEnvelope {
            request_id: request_id.into(),
            method: method.to_string(),
            path: path.to_string(),
            headers: Vec::new(),
            body: Vec::new(),
            session_id: None,
            received_at_ms: 0,
        }
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }

    pub fn with_session(mut self, session: Option<String>) -> Self {
        self.session_id = session;
        self
    }

    pub fn at(mut self, ms: u64) -> Self {
        self.received_at_ms = ms;
        self
    }

    pub fn path_only(&self) -> &str {
        self.path.split_once('?').map_or(&self.path, |(p, _)| p)
    }

    pub fn query(&self) -> &str {
        self.path.split_once('?').map_or("", |(_, q)| q)
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Exception details echoed by the production application on an unhandled failure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionMeta {
    pub kind: String,
    pub location: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    #[serde(with = "body_text")]
    pub body: Vec<u8>,
    pub produced_at_ms: u64,
    pub exception: Option<ExceptionMeta>,
}

impl ResponseEnvelope {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        ResponseEnvelope {
            status,
            headers: Vec::new(),
            body: body.into(),
            produced_at_ms: 0,
            exception: None,
        }
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn set_header(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self
            .headers
            .iter_mut()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
        {
            Some(slot) => slot.1 = value,
            None => self.headers.push((name.to_string(), value)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteMatch {
    /// `VERB /pattern`, the route template used in failure signatures.
    pub template: String,
    pub method: String,
    pub params: BTreeMap<String, String>,
}

impl Program {
    pub fn match_route(&self, verb: &str, path: &str) -> Option<RouteMatch> {
        let path = path.split_once('?').map_or(path, |(p, _)| p);
        let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        'routes: for r in &self.routes {
            if !r.verb.eq_ignore_ascii_case(verb) {
                continue;
            }
            let pat: Vec<&str> = r.pattern.split('/').filter(|s| !s.is_empty()).collect();
            if pat.len() != segs.len() {
                continue;
            }
            let mut params = BTreeMap::new();
            for (p, s) in pat.iter().zip(&segs) {
                if let Some(name) = p.strip_prefix(':') {
                    params.insert(name.to_string(), decode_component(s));
                } else if p != s {
                    continue 'routes;
                }
            }
            return Some(RouteMatch {
                template: format!("{} {}", r.verb, r.pattern),
                method: r.method.clone(),
                params,
            });
        }
        None
    }
}

fn decode_component(s: &str) -> String {
    form_urlencoded::parse(format!("x={s}").as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

/// The record an entry method receives as its parameter.
pub fn request_record(req: &RequestEnvelope, m: &RouteMatch) -> Value {
    let mut form: BTreeMap<String, Value> = BTreeMap::new();
    for (k, v) in form_urlencoded::parse(req.query().as_bytes()) {
        form.insert(k.into_owned(), Value::Str(v.into_owned()));
    }
    for (k, v) in form_urlencoded::parse(&req.body) {
        form.insert(k.into_owned(), Value::Str(v.into_owned()));
    }
    Value::record([
        ("id", Value::str(&req.request_id)),
        ("method", Value::str(req.method.to_ascii_uppercase())),
        ("path", Value::str(req.path_only())),
        ("route", Value::str(&m.template)),
        (
            "session",
            req.session_id.clone().map(Value::Str).unwrap_or(Value::Null),
        ),
        ("body", Value::Str(req.body_text())),
        ("form", Value::Record(form)),
        (
            "params",
            Value::Record(
                m.params
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::str(v)))
                    .collect(),
            ),
        ),
        ("time", Value::Int(req.received_at_ms as i64)),
    ])
}
