//! Sequential replay of a workload against a production app, as a client would.

use std::sync::Arc;

use hpl::{ExecError, ExecLimits, ExecutionResult, Program, RequestEnvelope, ResponseEnvelope};

use crate::app::{App, SESSION_HEADER};
use crate::harness::Harness;
use crate::store::Store;
use crate::workload::{CookieJar, Workload};

#[derive(Debug, Clone)]
pub struct Exchange {
    /// The request as sent, with the application-issued session token.
    pub request: RequestEnvelope,
    pub response: ResponseEnvelope,
    pub result: Result<ExecutionResult, ExecError>,
}

impl Exchange {
    pub fn failed(&self) -> bool {
        matches!(&self.result, Ok(r) if r.failure().is_some())
    }
}

/// Replays `requests` in order against a fresh app over `store`.
pub fn replay<'a>(
    program: Program,
    store: Arc<Store>,
    requests: impl IntoIterator<Item = &'a RequestEnvelope>,
    limits: ExecLimits,
) -> Vec<Exchange> {
    let app = App::new(program, store, limits);
    let mut jar = CookieJar::new(SESSION_HEADER);
    requests
        .into_iter()
        .map(|r| {
            let request = jar.prepare(r);
            let (result, response) = app.handle_with_result(&request);
            jar.observe(r, &response);
            Exchange {
                request,
                response,
                result,
            }
        })
        .collect()
}

pub fn replay_workload(
    program: Program,
    store: Arc<Store>,
    workload: &Workload,
    limits: ExecLimits,
) -> Vec<Exchange> {
    replay(program, store, workload.requests(), limits)
}

/// Sends `requests` through the full loop in order, as a client with a cookie jar.
pub fn drive<'a>(
    harness: &Harness,
    jar: &mut CookieJar,
    requests: impl IntoIterator<Item = &'a RequestEnvelope>,
) -> Vec<(RequestEnvelope, ResponseEnvelope)> {
    requests
        .into_iter()
        .map(|r| {
            let request = jar.prepare(r);
            let response = harness.handle(&request);
            jar.observe(r, &response);
            (request, response)
        })
        .collect()
}
