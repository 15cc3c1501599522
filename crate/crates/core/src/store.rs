//! Versioned key-value store and the handles handlers execute against.
//!
//! Every write bumps a global version and appends to the key's history, so the state
//! as of any earlier version stays readable. Sandboxed handles read the base as of a
//! pinned version and keep their own writes in a private overlay; they never touch
//! the base.

use std::collections::BTreeMap;
use std::sync::RwLock;
use std::time::Duration;

use hpl::{SandboxViolation, StoreAccess, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct Store {
    state: RwLock<State>,
    /// Simulated per-operation latency for `ReadWrite` handles (production only).
    op_latency: RwLock<Duration>,
}

#[derive(Debug, Default, Clone)]
struct State {
    version: u64,
    /// Per key, ascending `(version, value)`. A `Null` entry means deleted.
    history: BTreeMap<String, Vec<(u64, Value)>>,
}

impl State {
    fn get_at(&self, key: &str, at: u64) -> Value {
        self.history
            .get(key)
            .and_then(|h| h.iter().rev().find(|(v, _)| *v <= at))
            .map(|(_, v)| v.clone())
            .unwrap_or(Value::Null)
    }
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// A store whose version-0 state holds `entries`.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Value)>) -> Self {
        let mut state = State::default();
        for (k, v) in entries {
            if !v.is_null() {
                state.history.insert(k, vec![(0, v)]);
            }
        }
        Store {
            state: RwLock::new(state),
            op_latency: RwLock::new(Duration::ZERO),
        }
    }

    pub fn set_op_latency(&self, d: Duration) {
        *self.op_latency.write().expect("latency lock") = d;
    }

    fn latency(&self) -> Duration {
        *self.op_latency.read().expect("latency lock")
    }

    pub fn version(&self) -> u64 {
        self.state.read().expect("store lock").version
    }

    pub fn get(&self, key: &str) -> Value {
        let s = self.state.read().expect("store lock");
        s.get_at(key, s.version)
    }

    pub fn get_at(&self, key: &str, at: u64) -> Value {
        self.state.read().expect("store lock").get_at(key, at)
    }

    /// Atomic single-key write; returns the new version.
    pub fn put(&self, key: &str, value: Value) -> u64 {
        let mut s = self.state.write().expect("store lock");
        s.version += 1;
        let v = s.version;
        s.history.entry(key.to_string()).or_default().push((v, value));
        v
    }

    /// Live `(key, value)` pairs as of `at`, sorted by key.
    pub fn entries_at(&self, at: u64) -> Vec<(String, Value)> {
        let s = self.state.read().expect("store lock");
        s.history
            .keys()
            .filter_map(|k| {
                let v = s.get_at(k, at);
                (!v.is_null()).then(|| (k.clone(), v))
            })
            .collect()
    }

    /// Sorted `key<TAB>literal` lines.
    pub fn snapshot_text(&self, at: u64) -> String {
        let mut out = String::new();
        for (k, v) in self.entries_at(at) {
            out.push_str(&k);
            out.push('\t');
            out.push_str(&v.literal());
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the current version number and snapshot text.
    pub fn digest(&self) -> String {
        let s = self.state.read().expect("store lock");
        let at = s.version;
        drop(s);
        digest_snapshot(at, &self.snapshot_text(at))
    }

    /// Independent store holding the state as of `at`, at version 0.
    pub fn fork_at(&self, at: u64) -> Store {
        Store::from_entries(self.entries_at(at))
    }

    pub fn read_write(&self) -> StoreHandle<'_> {
        StoreHandle {
            store: self,
            mode: Mode::ReadWrite,
            at: None,
            overlay: BTreeMap::new(),
            latency: self.latency(),
        }
    }

    /// Sandbox view of the base as of `at`, with a discardable overlay.
    pub fn overlay(&self, at: u64) -> StoreHandle<'_> {
        StoreHandle {
            store: self,
            mode: Mode::OverlayReadOnly,
            at: Some(at),
            overlay: BTreeMap::new(),
            latency: Duration::ZERO,
        }
    }

    /// Strictly read-only view: writes are refused with a sandbox violation.
    pub fn read_only(&self, at: u64) -> StoreHandle<'_> {
        StoreHandle {
            store: self,
            mode: Mode::ReadOnly,
            at: Some(at),
            overlay: BTreeMap::new(),
            latency: Duration::ZERO,
        }
    }
}

pub fn digest_snapshot(version: u64, snapshot: &str) -> String {
    let mut h = Sha256::new();
    h.update(version.to_string().as_bytes());
    h.update(b"\n");
    h.update(snapshot.as_bytes());
    hex::encode(h.finalize())
}

/// Parses `key<TAB>literal` lines back into entries.
pub fn parse_snapshot(text: &str) -> Result<Vec<(String, Value)>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (k, lit) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: missing tab", i + 1))?;
            let v = hpl::parse_value(lit).map_err(|e| format!("line {}: {e}", i + 1))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    ReadWrite,
    OverlayReadOnly,
    ReadOnly,
}

#[derive(Debug)]
pub struct StoreHandle<'a> {
    store: &'a Store,
    mode: Mode,
    at: Option<u64>,
    overlay: BTreeMap<String, Value>,
    latency: Duration,
}

impl StoreHandle<'_> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn overlay_len(&self) -> usize {
        self.overlay.len()
    }

    fn pause(&self) {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
    }
}

impl StoreAccess for StoreHandle<'_> {
    fn get(&self, key: &str) -> Value {
        self.pause();
        if let Some(v) = self.overlay.get(key) {
            return v.clone();
        }
        match self.at {
            Some(at) => self.store.get_at(key, at),
            None => self.store.get(key),
        }
    }

    fn put(&mut self, key: &str, value: Value) -> Result<(), SandboxViolation> {
        self.pause();
        match self.mode {
            Mode::ReadWrite => {
                self.store.put(key, value);
            }
            Mode::OverlayReadOnly => {
                self.overlay.insert(key.to_string(), value);
            }
            Mode::ReadOnly => {
                return Err(SandboxViolation {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_key_is_null() {
        let s = Store::new();
        assert_eq!(s.overlay(0).get("nope"), Value::Null);
    }

    #[test]
    fn overlay_shadows_base_and_is_discarded() {
        let s = Store::from_entries([("a".to_string(), Value::Int(1))]);
        let before = s.digest();
        let mut h = s.overlay(s.version());
        h.put("a", Value::Int(2)).unwrap();
        assert_eq!(h.get("a"), Value::Int(2));
        drop(h);
        assert_eq!(s.overlay(s.version()).get("a"), Value::Int(1));
        assert_eq!(s.get("a"), Value::Int(1));
        assert_eq!(s.digest(), before);
    }

    #[test]
    fn pinned_reads_see_old_versions() {
        let s = Store::from_entries([("k".to_string(), Value::Int(1))]);
        let v0 = s.version();
        s.read_write().put("k", Value::Int(7)).unwrap();
        assert_eq!(s.get("k"), Value::Int(7));
        assert_eq!(s.overlay(v0).get("k"), Value::Int(1));
        assert_eq!(s.fork_at(v0).get("k"), Value::Int(1));
    }

    #[test]
    fn read_only_refuses_writes() {
        let s = Store::new();
        let mut h = s.read_only(0);
        assert_eq!(
            h.put("x", Value::Int(1)),
            Err(SandboxViolation { key: "x".into() })
        );
        assert_eq!(s.version(), 0);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = Store::from_entries([
            ("b".to_string(), Value::record([("x", Value::str("t\tab"))])),
            ("a".to_string(), Value::List(vec![Value::Int(-3), Value::Null])),
        ]);
        let text = s.snapshot_text(0);
        assert!(text.starts_with("a\t"));
        let back = Store::from_entries(parse_snapshot(&text).unwrap());
        assert_eq!(back.snapshot_text(0), text);
        assert_eq!(back.digest(), s.digest());
    }
}
