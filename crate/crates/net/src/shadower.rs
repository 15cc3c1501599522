//! The shadowing proxy. Each request goes to production and production's answer goes
//! straight back to the client; the request oracle then routes a copy to exactly one
//! shadow sink, the patch search for failures or the regression queue for successes.
//! Mirrors receive a raw copy of every request with their own session tokens.
//!
//! Enqueueing never waits: a full queue drops the duplicate and counts it.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::response::Response;
use axum::Router;
use http_body_util::BodyExt;
use hpl::{RequestEnvelope, ResponseEnvelope};
use hyper::StatusCode;
use serde::{Deserialize, Serialize};
use shadowfix_core::events::Branch;
use shadowfix_core::harness::Harness;
use shadowfix_core::session::SessionMap;
use tokio::sync::mpsc;

use crate::http::{request_envelope, to_http_response, EnvelopeClient, RequestIds};

/// FIFO with a fixed capacity. `push` refuses rather than waits.
#[derive(Debug)]
pub struct BoundedQueue<T> {
    items: Mutex<(VecDeque<T>, bool)>,
    ready: Condvar,
    capacity: usize,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        BoundedQueue {
            items: Mutex::new((VecDeque::with_capacity(capacity), false)),
            ready: Condvar::new(),
            capacity,
        }
    }

    /// Hands the item back when the queue is full or closed.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut q = self.items.lock().expect("queue lock");
        if q.1 || q.0.len() >= self.capacity {
            return Err(item);
        }
        q.0.push_back(item);
        self.ready.notify_one();
        Ok(())
    }

    /// Blocks until an item arrives; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let q = self.items.lock().expect("queue lock");
        let mut q = self
            .ready
            .wait_while(q, |q| q.0.is_empty() && !q.1)
            .expect("queue lock");
        q.0.pop_front()
    }

    pub fn close(&self) {
        self.items.lock().expect("queue lock").1 = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("queue lock").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct ShadowerConfig {
    pub upstream: SocketAddr,
    pub session_header: String,
    pub patch_queue: usize,
    pub regression_queue: usize,
    pub mirror_queue: usize,
    pub mirrors: Vec<(String, SocketAddr)>,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    upstream_errors: AtomicU64,
    patch_enqueued: AtomicU64,
    patch_dropped: AtomicU64,
    patch_done: AtomicU64,
    regression_enqueued: AtomicU64,
    regression_dropped: AtomicU64,
    regression_done: AtomicU64,
    mirror_sent: AtomicU64,
    mirror_dropped: AtomicU64,
    mirror_errors: AtomicU64,
}

/// Counter snapshot, as served by the control API.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowerStats {
    pub requests: u64,
    pub upstream_errors: u64,
    pub patch_enqueued: u64,
    pub patch_dropped: u64,
    pub patch_done: u64,
    pub patch_queue_len: usize,
    pub regression_enqueued: u64,
    pub regression_dropped: u64,
    pub regression_done: u64,
    pub regression_queue_len: usize,
    pub mirror_sent: u64,
    pub mirror_dropped: u64,
    pub mirror_errors: u64,
}

type Pair = (RequestEnvelope, ResponseEnvelope);

struct Mirror {
    name: String,
    tx: mpsc::Sender<Pair>,
}

struct Inner {
    config: ShadowerConfig,
    client: EnvelopeClient,
    harness: Arc<Harness>,
    sessions: Arc<SessionMap>,
    ids: RequestIds,
    patch: Arc<BoundedQueue<Pair>>,
    regression: Arc<BoundedQueue<Pair>>,
    mirrors: Vec<Mirror>,
    counters: Arc<Counters>,
    /// Set while the patch worker is told to hold off, for tests of the queue bound.
    paused: Arc<AtomicBool>,
}

/// Cheap to clone; all clones share queues, counters and workers.
#[derive(Clone)]
pub struct Shadower {
    inner: Arc<Inner>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl std::fmt::Debug for Shadower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shadower").field("config", &self.inner.config).finish()
    }
}

impl Shadower {
    /// Starts one worker thread per in-process sink and one task per mirror. Must be
    /// called inside a tokio runtime.
    pub fn start(config: ShadowerConfig, harness: Arc<Harness>) -> Shadower {
        let counters = Arc::new(Counters::default());
        let sessions = Arc::new(SessionMap::new(&config.session_header));
        let client = EnvelopeClient::new(&config.session_header);
        let patch = Arc::new(BoundedQueue::new(config.patch_queue));
        let regression = Arc::new(BoundedQueue::new(config.regression_queue));
        let paused = Arc::new(AtomicBool::new(false));
        let mut workers = Vec::new();
        {
            let (q, h, c, p) = (patch.clone(), harness.clone(), counters.clone(), paused.clone());
            workers.push(std::thread::spawn(move || {
                while let Some((req, resp)) = q.pop() {
                    while p.load(Ordering::Acquire) {
                        std::thread::sleep(std::time::Duration::from_millis(1));
                    }
                    h.explore_failure(&req, &resp);
                    c.patch_done.fetch_add(1, Ordering::Release);
                }
            }));
        }
        {
            let (q, h, c) = (regression.clone(), harness.clone(), counters.clone());
            workers.push(std::thread::spawn(move || {
                while let Some((req, resp)) = q.pop() {
                    h.on_success_request(&req, &resp);
                    c.regression_done.fetch_add(1, Ordering::Release);
                }
            }));
        }
        let mirrors = config
            .mirrors
            .iter()
            .map(|(name, addr)| {
                let (tx, rx) = mpsc::channel(config.mirror_queue);
                tokio::spawn(mirror_worker(
                    name.clone(),
                    *addr,
                    rx,
                    client.clone(),
                    sessions.clone(),
                    counters.clone(),
                ));
                Mirror { name: name.clone(), tx }
            })
            .collect();
        Shadower {
            inner: Arc::new(Inner {
                config,
                client,
                harness,
                sessions,
                ids: RequestIds::new("req"),
                patch,
                regression,
                mirrors,
                counters,
                paused,
            }),
            workers: Arc::new(Mutex::new(workers)),
        }
    }

    pub fn router(&self) -> Router {
        Router::new().fallback(proxy).with_state(self.clone())
    }

    pub fn harness(&self) -> &Arc<Harness> {
        &self.inner.harness
    }

    pub fn sessions(&self) -> &Arc<SessionMap> {
        &self.inner.sessions
    }

    pub fn mirror_names(&self) -> Vec<&str> {
        self.inner.mirrors.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn stats(&self) -> ShadowerStats {
        let c = &self.inner.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Acquire);
        ShadowerStats {
            requests: get(&c.requests),
            upstream_errors: get(&c.upstream_errors),
            patch_enqueued: get(&c.patch_enqueued),
            patch_dropped: get(&c.patch_dropped),
            patch_done: get(&c.patch_done),
            patch_queue_len: self.inner.patch.len(),
            regression_enqueued: get(&c.regression_enqueued),
            regression_dropped: get(&c.regression_dropped),
            regression_done: get(&c.regression_done),
            regression_queue_len: self.inner.regression.len(),
            mirror_sent: get(&c.mirror_sent),
            mirror_dropped: get(&c.mirror_dropped),
            mirror_errors: get(&c.mirror_errors),
        }
    }

    /// Holds the patch worker before its next search. Queued failures stay queued.
    pub fn pause_patch_worker(&self, paused: bool) {
        self.inner.paused.store(paused, Ordering::Release);
    }

    /// Waits until every duplicate enqueued so far has been processed by its sink.
    pub async fn settle(&self) {
        let c = &self.inner.counters;
        loop {
            let s = self.stats();
            let mirrors_idle = self.inner.mirrors.iter().all(|m| m.tx.capacity() == m.tx.max_capacity());
            if s.patch_done == c.patch_enqueued.load(Ordering::Acquire)
                && s.regression_done == c.regression_enqueued.load(Ordering::Acquire)
                && mirrors_idle
            {
                // A mirror's last send may still be in flight after its channel drained.
                tokio::time::sleep(std::time::Duration::from_millis(5)).await;
                if self.stats() == s {
                    return;
                }
            }
            tokio::time::sleep(std::time::Duration::from_millis(2)).await;
        }
    }

    /// Closes the in-process queues and joins their workers once drained.
    pub async fn shutdown(self) {
        self.inner.patch.close();
        self.inner.regression.close();
        self.inner.paused.store(false, Ordering::Release);
        let workers: Vec<_> = self.workers.lock().expect("workers lock").drain(..).collect();
        let _ = tokio::task::spawn_blocking(move || {
            for w in workers {
                let _ = w.join();
            }
        })
        .await;
    }

    /// Routes one answered request: counts a failure or queues the pair for regression,
    /// and copies it to every mirror.
    fn dispatch(&self, req: RequestEnvelope, resp: ResponseEnvelope, latency: std::time::Duration) {
        let inner = &self.inner;
        let branch = inner.harness.route(&req, &resp, latency);
        let (queue, enqueued, dropped) = match branch {
            Branch::Patch => (&inner.patch, &inner.counters.patch_enqueued, &inner.counters.patch_dropped),
            Branch::Regression => (
                &inner.regression,
                &inner.counters.regression_enqueued,
                &inner.counters.regression_dropped,
            ),
        };
        for m in &inner.mirrors {
            if m.tx.try_send((req.clone(), resp.clone())).is_err() {
                inner.counters.mirror_dropped.fetch_add(1, Ordering::AcqRel);
            }
        }
        match queue.push((req, resp)) {
            Ok(()) => {
                enqueued.fetch_add(1, Ordering::AcqRel);
            }
            Err((req, _)) => {
                dropped.fetch_add(1, Ordering::AcqRel);
                inner.harness.record_dropped(&req, branch);
            }
        }
    }
}

async fn proxy(State(s): State<Shadower>, req: Request) -> Response {
    let start = Instant::now();
    let inner = &s.inner;
    inner.counters.requests.fetch_add(1, Ordering::AcqRel);
    let (parts, body) = req.into_parts();
    let Ok(body) = body.collect().await.map(|b| b.to_bytes()) else {
        return plain(StatusCode::BAD_REQUEST, "unreadable body\n");
    };
    let path = parts.uri.path_and_query().map_or("/", |p| p.as_str());
    let env = request_envelope(
        &parts.method,
        path,
        &parts.headers,
        body,
        &inner.config.session_header,
        &inner.ids,
    );
    let resp = match inner.client.send(&env, inner.config.upstream).await {
        Ok(r) => r,
        Err(e) => {
            inner.counters.upstream_errors.fetch_add(1, Ordering::AcqRel);
            tracing::warn!(request_id = %env.request_id, "upstream unreachable: {e}");
            return plain(StatusCode::BAD_GATEWAY, "upstream unreachable\n");
        }
    };
    let latency = start.elapsed();
    let out = to_http_response(&resp);
    s.dispatch(env, resp, latency);
    out
}

fn plain(status: StatusCode, body: &'static str) -> Response {
    let mut r = Response::new(Body::from(body));
    *r.status_mut() = status;
    r
}

/// Delivers duplicates to one mirror in arrival order. Translation happens here, not
/// at enqueue time, so a token learned from one duplicate's answer applies to the
/// next duplicate of the same session.
async fn mirror_worker(
    name: String,
    addr: SocketAddr,
    mut rx: mpsc::Receiver<Pair>,
    client: EnvelopeClient,
    sessions: Arc<SessionMap>,
    counters: Arc<Counters>,
) {
    while let Some((req, production)) = rx.recv().await {
        let mut dup = sessions.translate(&name, &req);
        // The mirror is a separate application run; its request ids are its own.
        dup.request_id = format!("{}.{name}", req.request_id);
        match client.send(&dup, addr).await {
            Ok(shadow) => {
                sessions.observe(&name, &req, &production, &shadow);
                counters.mirror_sent.fetch_add(1, Ordering::AcqRel);
            }
            Err(e) => {
                counters.mirror_errors.fetch_add(1, Ordering::AcqRel);
                tracing::warn!(mirror = %name, "duplicate not delivered: {e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_queue_refuses_when_full_and_drains_after_close() {
        let q = BoundedQueue::new(2);
        assert!(q.push(1).is_ok() && q.push(2).is_ok());
        assert_eq!(q.push(3), Err(3));
        assert_eq!(q.len(), 2);
        q.close();
        assert_eq!(q.push(4), Err(4));
        assert_eq!((q.pop(), q.pop(), q.pop()), (Some(1), Some(2), None));
    }

    #[test]
    fn pop_wakes_on_push_from_another_thread() {
        let q = Arc::new(BoundedQueue::new(1));
        let q2 = q.clone();
        let t = std::thread::spawn(move || q2.pop());
        std::thread::sleep(std::time::Duration::from_millis(20));
        q.push(9).unwrap();
        assert_eq!(t.join().unwrap(), Some(9));
    }
}
