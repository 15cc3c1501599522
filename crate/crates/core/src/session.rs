//! Per-target session translation for duplicated requests.
//!
//! A shadow application issues its own session tokens. The map pairs each client
//! token (as issued by production) with the token the shadow issued for the same
//! session, one bijection per shadow target.

use std::collections::BTreeMap;
use std::sync::Mutex;

use hpl::{RequestEnvelope, ResponseEnvelope};

#[derive(Debug, Default)]
struct Bijection {
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
}

impl Bijection {
    fn insert(&mut self, client: &str, shadow: &str) {
        if let Some(old) = self.forward.remove(client) {
            self.backward.remove(&old);
        }
        if let Some(old) = self.backward.remove(shadow) {
            self.forward.remove(&old);
        }
        self.forward.insert(client.to_string(), shadow.to_string());
        self.backward.insert(shadow.to_string(), client.to_string());
    }
}

#[derive(Debug)]
pub struct SessionMap {
    header: String,
    targets: Mutex<BTreeMap<String, Bijection>>,
}

impl SessionMap {
    pub fn new(session_header: &str) -> Self {
        SessionMap {
            header: session_header.to_string(),
            targets: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    /// The duplicate for `target`. Unknown sessions and session-less requests pass
    /// through unchanged.
    pub fn translate(&self, target: &str, req: &RequestEnvelope) -> RequestEnvelope {
        let mut out = req.clone();
        if let Some(client) = &req.session_id {
            if let Some(shadow) = self.lookup(target, client) {
                out.session_id = Some(shadow);
            }
        }
        out
    }

    pub fn lookup(&self, target: &str, client: &str) -> Option<String> {
        let targets = self.targets.lock().expect("session map lock");
        targets.get(target)?.forward.get(client).cloned()
    }

    pub fn reverse(&self, target: &str, shadow: &str) -> Option<String> {
        let targets = self.targets.lock().expect("session map lock");
        targets.get(target)?.backward.get(shadow).cloned()
    }

    pub fn learn(&self, target: &str, client: &str, shadow: &str) {
        let mut targets = self.targets.lock().expect("session map lock");
        targets.entry(target.to_string()).or_default().insert(client, shadow);
    }

    /// Records the pairing revealed by a shadow response. The client token is the one
    /// production issued for this request, or the one the client presented.
    pub fn observe(
        &self,
        target: &str,
        client_req: &RequestEnvelope,
        production: &ResponseEnvelope,
        shadow: &ResponseEnvelope,
    ) {
        let client = production
            .header(&self.header)
            .map(str::to_string)
            .or_else(|| client_req.session_id.clone());
        if let (Some(c), Some(s)) = (client, shadow.header(&self.header)) {
            self.learn(target, &c, s);
        }
    }

    pub fn len(&self, target: &str) -> usize {
        let targets = self.targets.lock().expect("session map lock");
        targets.get(target).map_or(0, |b| b.forward.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_missing_sessions_pass_through() {
        let m = SessionMap::new("x-session");
        let r = RequestEnvelope::new("r", "GET", "/");
        assert_eq!(m.translate("t", &r), r);
        let r = r.with_session(Some("c1".into()));
        assert_eq!(m.translate("t", &r), r);
    }

    #[test]
    fn mapping_is_per_target_and_bijective() {
        let m = SessionMap::new("x-session");
        m.learn("a", "c1", "s9");
        let r = RequestEnvelope::new("r", "GET", "/").with_session(Some("c1".into()));
        assert_eq!(m.translate("a", &r).session_id.as_deref(), Some("s9"));
        assert_eq!(m.translate("b", &r).session_id.as_deref(), Some("c1"));
        m.learn("a", "c2", "s9");
        assert_eq!(m.lookup("a", "c1"), None);
        assert_eq!(m.reverse("a", "s9").as_deref(), Some("c2"));
        assert_eq!(m.len("a"), 1);
    }
}
