//! Failure signatures: the grouping key for recurrences of one production failure.

use std::fmt;

use hpl::ResponseEnvelope;
use serde::{Deserialize, Serialize};

use crate::app::{exception_meta, ROUTE_HEADER};

/// `(exception kind, failure location, route template)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub kind: String,
    pub location: String,
    pub route: String,
}

impl Signature {
    pub fn new(kind: &str, location: &str, route: &str) -> Self {
        Signature {
            kind: kind.to_string(),
            location: location.to_string(),
            route: route.to_string(),
        }
    }

    /// The signature of a failing production response. A 5xx without exception
    /// metadata is grouped as `http-<status>` at location `-`.
    pub fn of_response(resp: &ResponseEnvelope, method: &str, path: &str) -> Self {
        let route = resp
            .header(ROUTE_HEADER)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{method} {path}"));
        match exception_meta(resp) {
            Some(m) => Signature {
                kind: m.kind,
                location: m.location,
                route,
            },
            None => Signature {
                kind: format!("http-{}", resp.status),
                location: "-".into(),
                route,
            },
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} on {}", self.kind, self.location, self.route)
    }
}
