//! The production application and sandboxed shadow executions of it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use hpl::{
    execute, ExceptionMeta, ExecError, ExecLimits, ExecutionResult, Outcome, Program,
    RequestEnvelope, ResponseEnvelope,
};

use crate::store::{Store, StoreHandle};

pub const SESSION_HEADER: &str = "x-session";
/// Store version the request was executed against.
pub const STORE_VERSION_HEADER: &str = "x-store-version";
pub const PROGRAM_VERSION_HEADER: &str = "x-hpl-version";
pub const ROUTE_HEADER: &str = "x-hpl-route";
/// `<kind> <location>` of an unhandled exception.
pub const EXCEPTION_HEADER: &str = "x-hpl-exception";

/// Builds the HTTP response for an execution. Unhandled exceptions become a 500 whose
/// body names the exception kind; execution errors outside the handler (no route,
/// sandbox violation) become 404 and 500 respectively.
pub fn render(
    result: &Result<ExecutionResult, ExecError>,
    program_version: u64,
    store_version: u64,
    now_ms: u64,
) -> ResponseEnvelope {
    let mut resp = match result {
        Ok(r) => match &r.outcome {
            Outcome::Success(resp) => {
                let mut resp = resp.clone();
                resp.set_header(ROUTE_HEADER, &r.route);
                resp
            }
            Outcome::Exception(f) => {
                let mut resp =
                    ResponseEnvelope::new(500, format!("internal error: {}\n", f.kind));
                let meta = ExceptionMeta {
                    kind: f.kind.to_string(),
                    location: f.location.to_string(),
                };
                resp.set_header(EXCEPTION_HEADER, format!("{} {}", meta.kind, meta.location));
                resp.set_header(ROUTE_HEADER, &r.route);
                resp.exception = Some(meta);
                resp
            }
        },
        Err(ExecError::NoRoute { .. }) => ResponseEnvelope::new(404, "not found\n"),
        Err(ExecError::Sandbox(v)) => ResponseEnvelope::new(500, format!("internal error: {v}\n")),
    };
    resp.produced_at_ms = now_ms;
    resp.set_header(STORE_VERSION_HEADER, store_version.to_string());
    resp.set_header(PROGRAM_VERSION_HEADER, program_version.to_string());
    resp
}

/// Reads back the exception meta a production response carries in its headers.
pub fn exception_meta(resp: &ResponseEnvelope) -> Option<ExceptionMeta> {
    if let Some(m) = &resp.exception {
        return Some(m.clone());
    }
    let (kind, location) = resp.header(EXCEPTION_HEADER)?.split_once(' ')?;
    Some(ExceptionMeta {
        kind: kind.to_string(),
        location: location.to_string(),
    })
}

pub fn header_u64(resp: &ResponseEnvelope, name: &str) -> Option<u64> {
    resp.header(name)?.parse().ok()
}

/// One sandboxed run: the program against an overlay on the store as of `at`.
pub fn run_sandboxed(
    program: &Program,
    req: &RequestEnvelope,
    store: &Store,
    at: u64,
    limits: ExecLimits,
) -> (Result<ExecutionResult, ExecError>, ResponseEnvelope) {
    let mut handle = store.overlay(at);
    let result = execute(program, req, &mut handle, limits);
    let resp = render(&result, program.version, at, req.received_at_ms);
    (result, resp)
}

/// Production: owns the live program, the shared store and the published versions.
#[derive(Debug)]
pub struct App {
    current: RwLock<Arc<Program>>,
    versions: RwLock<BTreeMap<u64, Arc<Program>>>,
    store: Arc<Store>,
    limits: ExecLimits,
    /// Requests execute one at a time, so the pre-request store version pins exactly
    /// the state each request observed.
    serial: Mutex<()>,
}

impl App {
    pub fn new(program: Program, store: Arc<Store>, limits: ExecLimits) -> Self {
        let program = Arc::new(program);
        App {
            versions: RwLock::new(BTreeMap::from([(program.version, program.clone())])),
            current: RwLock::new(program),
            store,
            limits,
            serial: Mutex::new(()),
        }
    }

    pub fn program(&self) -> Arc<Program> {
        self.current.read().expect("program lock").clone()
    }

    pub fn program_version(&self, v: u64) -> Option<Arc<Program>> {
        self.versions.read().expect("versions lock").get(&v).cloned()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn limits(&self) -> ExecLimits {
        self.limits
    }

    /// Atomically replaces the live program. The published version is strictly greater
    /// than every earlier one.
    pub fn publish(&self, mut program: Program) -> u64 {
        let mut versions = self.versions.write().expect("versions lock");
        let next = versions.keys().next_back().map_or(0, |v| v + 1);
        program.version = program.version.max(next);
        let v = program.version;
        let program = Arc::new(program);
        versions.insert(v, program.clone());
        *self.current.write().expect("program lock") = program;
        v
    }

    pub fn handle(&self, req: &RequestEnvelope) -> ResponseEnvelope {
        self.handle_with_result(req).1
    }

    pub fn handle_with_result(
        &self,
        req: &RequestEnvelope,
    ) -> (Result<ExecutionResult, ExecError>, ResponseEnvelope) {
        let _turn = self.serial.lock().expect("serial lock");
        let program = self.program();
        let at = self.store.version();
        let mut handle: StoreHandle<'_> = self.store.read_write();
        let result = execute(&program, req, &mut handle, self.limits);
        let resp = render(&result, program.version, at, req.received_at_ms);
        (result, resp)
    }
}
