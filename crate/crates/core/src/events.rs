//! Append-only event log. Every routing decision, failure, patch state change and
//! regression comparison is one record, numbered by a cursor.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::oracles::Oracle;
use crate::patch::{PatchModel, PatchState};
use crate::signature::Signature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Patch,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    /// Production answered; the request went to one shadow sink.
    Routed {
        request_id: String,
        branch: Branch,
        status: u16,
        latency_us: u64,
    },
    /// A duplicate was discarded because its queue was full.
    Dropped { request_id: String, branch: Branch },
    Failure {
        request_id: String,
        signature: Signature,
        count: u64,
    },
    Explored {
        signature: Signature,
        model: PatchModel,
        valid: usize,
        invalid: usize,
    },
    Unreproducible {
        signature: Signature,
        request_id: String,
    },
    Patch {
        patch_id: String,
        signature: Signature,
        state: PatchState,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        reason: String,
    },
    Regression {
        request_id: String,
        patch_id: String,
        oracle: Oracle,
        diverged: bool,
        magnitude: f64,
    },
    Deployed { patch_id: String, version: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cursor: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Default)]
pub struct EventLog {
    records: Mutex<Vec<Record>>,
    grown: Condvar,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, event: Event) -> u64 {
        let mut records = self.records.lock().expect("event log lock");
        let cursor = records.len() as u64;
        records.push(Record { cursor, event });
        self.grown.notify_all();
        cursor
    }

    /// The cursor the next record will get.
    pub fn end(&self) -> u64 {
        self.records.lock().expect("event log lock").len() as u64
    }

    pub fn since(&self, cursor: u64) -> Vec<Record> {
        let records = self.records.lock().expect("event log lock");
        records.iter().skip(cursor as usize).cloned().collect()
    }

    pub fn all(&self) -> Vec<Record> {
        self.since(0)
    }

    /// Blocks until a record at or after `cursor` exists or the timeout passes.
    pub fn wait_since(&self, cursor: u64, timeout: Duration) -> Vec<Record> {
        let records = self.records.lock().expect("event log lock");
        let (records, _) = self
            .grown
            .wait_timeout_while(records, timeout, |r| r.len() as u64 <= cursor)
            .expect("event log lock");
        records.iter().skip(cursor as usize).cloned().collect()
    }

    pub fn to_json_lines(&self) -> String {
        self.all()
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn cursors_are_dense_and_resumable() {
        let log = EventLog::new();
        for i in 0..3 {
            log.append(Event::Deployed {
                patch_id: format!("p{i}"),
                version: i,
            });
        }
        assert_eq!(log.end(), 3);
        let tail = log.since(1);
        assert_eq!(tail.iter().map(|r| r.cursor).collect::<Vec<_>>(), [1, 2]);
        let line = serde_json::to_string(&tail[0]).unwrap();
        assert_eq!(line, r#"{"cursor":1,"type":"deployed","patch_id":"p1","version":1}"#);
        let back: Record = serde_json::from_str(&line).unwrap();
        assert_eq!(back, tail[0]);
    }

    #[test]
    fn waiting_reader_wakes_on_append() {
        let log = Arc::new(EventLog::new());
        let reader = {
            let log = log.clone();
            std::thread::spawn(move || log.wait_since(0, Duration::from_secs(5)))
        };
        std::thread::sleep(Duration::from_millis(20));
        log.append(Event::Deployed {
            patch_id: "p".into(),
            version: 1,
        });
        assert_eq!(reader.join().unwrap().len(), 1);
        assert!(log.wait_since(1, Duration::from_millis(10)).is_empty());
    }
}
