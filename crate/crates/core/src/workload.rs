//! Deterministic user traffic for the bundled shop.
//!
//! A workload is 25 sessions of 3 to 7 requests each. Every request is drawn uniformly
//! from the six-entry pool `browse, view, add, shipping, checkout, admin`, with its
//! parameters drawn uniformly from the lists below. All draws come from one
//! [`Rng`](crate::rng::Rng) stream seeded with the workload seed, in generation order.

use std::collections::BTreeMap;

use hpl::{RequestEnvelope, ResponseEnvelope};
use serde::{Deserialize, Serialize};

use crate::profile::UnknownProfile;
use crate::rng::Rng;

pub const SESSIONS: usize = 25;
pub const MIN_REQUESTS: u64 = 3;
pub const MAX_REQUESTS: u64 = 7;
/// Synthetic clock origin (2023-11-14T22:13:20Z); each request is one second later.
pub const EPOCH_MS: u64 = 1_700_000_000_000;

pub const POOL: [&str; 6] = ["browse", "view", "add", "shipping", "checkout", "admin"];
const PRODUCTS: [&str; 7] = ["p1", "p2", "p3", "p4", "p5", "p6", "p9"];
const CARRIERS: [Option<&str>; 5] = [
    Some("std"),
    Some("eco"),
    Some("pickup"),
    Some("bogus"),
    None,
];
const COUPONS: [Option<&str>; 5] = [Some("SAVE10"), Some("HALF"), Some("BOGUS"), Some(""), None];
const NAMES: [Option<&str>; 3] = [Some("Bob"), Some("Carol"), None];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    /// Client-side label; the application issues the real token on first contact.
    pub session_id: String,
    pub requests: Vec<RequestEnvelope>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub profile: String,
    pub seed: u64,
    pub sessions: Vec<Session>,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.sessions.iter().map(|s| s.requests.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Requests in replay order: session by session.
    pub fn requests(&self) -> impl Iterator<Item = &RequestEnvelope> {
        self.sessions.iter().flat_map(|s| s.requests.iter())
    }

    /// One request per line: `id, time, method, path, session, body`, tab-separated,
    /// with `-` for an empty body.
    pub fn to_text(&self) -> String {
        let mut out = format!("# workload profile={} seed={}\n", self.profile, self.seed);
        for r in self.requests() {
            let body = r.body_text();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.request_id,
                r.received_at_ms,
                r.method,
                r.path,
                r.session_id.as_deref().unwrap_or("-"),
                if body.is_empty() { "-" } else { &body }
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Workload, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty workload")?;
        let mut profile = None;
        let mut seed = None;
        for part in header.trim_start_matches('#').split_whitespace() {
            match part.split_once('=') {
                Some(("profile", v)) => profile = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        let mut sessions: Vec<Session> = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [id, time, method, path, session, body] = f[..] else {
                return Err(format!("line {}: expected 6 fields", i + 2));
            };
            let time = time
                .parse()
                .map_err(|_| format!("line {}: bad time", i + 2))?;
            let session = (session != "-").then(|| session.to_string());
            let mut req = RequestEnvelope::new(id, method, path)
                .with_session(session.clone())
                .at(time);
            if body != "-" {
                req = req.with_body(body);
            }
            let label = session.unwrap_or_default();
            match sessions.last_mut() {
                Some(s) if s.session_id == label => s.requests.push(req),
                _ => sessions.push(Session {
                    session_id: label,
                    requests: vec![req],
                }),
            }
        }
        Ok(Workload {
            profile: profile.ok_or("missing profile")?,
            seed: seed.ok_or("missing seed")?,
            sessions,
        })
    }
}

pub fn generate(profile: &str, seed: u64) -> Result<Workload, UnknownProfile> {
    if profile != "shop" {
        return Err(UnknownProfile(profile.to_string()));
    }
    let mut rng = Rng::new(seed);
    let mut sessions = Vec::with_capacity(SESSIONS);
    let mut clock = EPOCH_MS;
    for s in 0..SESSIONS {
        let label = format!("s{:02}", s + 1);
        let n = rng.range(MIN_REQUESTS, MAX_REQUESTS);
        let mut requests = Vec::with_capacity(n as usize);
        for k in 0..n {
            let id = format!("w{seed}-{label}-{k}");
            let req = draw_request(&mut rng, &id, s, k)
                .with_session(Some(label.clone()))
                .at(clock);
            clock += 1000;
            requests.push(req);
        }
        sessions.push(Session {
            session_id: label,
            requests,
        });
    }
    Ok(Workload {
        profile: profile.to_string(),
        seed,
        sessions,
    })
}

fn form(pairs: &[(&str, Option<String>)]) -> String {
    let mut s = form_urlencoded::Serializer::new(String::new());
    for (k, v) in pairs {
        if let Some(v) = v {
            s.append_pair(k, v);
        }
    }
    s.finish()
}

fn draw_request(rng: &mut Rng, id: &str, session: usize, k: u64) -> RequestEnvelope {
    match *rng.pick(&POOL) {
        "browse" => RequestEnvelope::new(id, "GET", "/"),
        "view" => RequestEnvelope::new(id, "GET", &format!("/product/{}", rng.pick(&PRODUCTS))),
        "add" => {
            let product = rng.pick(&PRODUCTS).to_string();
            let qty = rng.below(4);
            RequestEnvelope::new(id, "POST", "/cart/add").with_body(form(&[
                ("product", Some(product)),
                ("qty", (qty > 0).then(|| qty.to_string())),
            ]))
        }
        "shipping" => match rng.pick(&CARRIERS) {
            Some(c) => RequestEnvelope::new(id, "GET", &format!("/shipping?carrier={c}")),
            None => RequestEnvelope::new(id, "GET", "/shipping"),
        },
        "checkout" => {
            let carrier = rng.pick(&CARRIERS).map(str::to_string);
            let coupon = rng.pick(&COUPONS).map(str::to_string);
            RequestEnvelope::new(id, "POST", "/checkout")
                .with_body(form(&[("carrier", carrier), ("coupon", coupon)]))
        }
        _ => {
            let with_email = rng.below(8) != 0;
            let name = rng.pick(&NAMES).map(str::to_string);
            let email = with_email.then(|| format!("user{}-{k}@example.org", session + 1));
            RequestEnvelope::new(id, "POST", "/admin/customer")
                .with_body(form(&[("email", email), ("name", name)]))
        }
    }
}

/// Client-side cookie jar: maps workload session labels to the tokens the application
/// issued, so replayed requests present the real session.
#[derive(Debug, Default, Clone)]
pub struct CookieJar {
    tokens: BTreeMap<String, String>,
    header: String,
}

impl CookieJar {
    pub fn new(session_header: &str) -> Self {
        CookieJar {
            tokens: BTreeMap::new(),
            header: session_header.to_string(),
        }
    }

    /// The request as the client would send it.
    pub fn prepare(&self, req: &RequestEnvelope) -> RequestEnvelope {
        let mut out = req.clone();
        out.session_id = req
            .session_id
            .as_ref()
            .and_then(|label| self.tokens.get(label).cloned());
        out
    }

    pub fn observe(&mut self, req: &RequestEnvelope, resp: &ResponseEnvelope) {
        if let (Some(label), Some(token)) = (&req.session_id, resp.header(&self.header)) {
            self.tokens.insert(label.clone(), token.to_string());
        }
    }

    pub fn token(&self, label: &str) -> Option<&str> {
        self.tokens.get(label).map(String::as_str)
    }
}
