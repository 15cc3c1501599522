//! The operator's HTTP API over a running harness. Reads are snapshots; approve and
//! reject are the only calls that change anything.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shadowfix_core::harness::Harness;
use shadowfix_core::patch::{render_diff, CandidatePatch};
use shadowfix_core::regression::DecisionError;

use crate::shadower::Shadower;

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_secs(15);

#[derive(Clone)]
struct ControlState {
    harness: Arc<Harness>,
    shadower: Option<Shadower>,
}

pub fn router(harness: Arc<Harness>, shadower: Option<Shadower>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/stats", get(stats))
        .route("/failures", get(failures))
        .route("/patches", get(patches))
        .route("/patches/{id}", get(patch))
        .route("/patches/{id}/approve", post(approve))
        .route("/patches/{id}/reject", post(reject))
        .route("/events", get(events))
        .with_state(ControlState { harness, shadower })
}

#[derive(Debug, Serialize, Deserialize)]
struct ApiError {
    error: &'static str,
    message: String,
}

fn error(status: StatusCode, error: &'static str, message: String) -> Response {
    (status, Json(ApiError { error, message })).into_response()
}

/// Runs a harness call off the async workers; the regression lock can be held for a
/// whole regression step.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("harness calls do not panic")
}

async fn health(State(s): State<ControlState>) -> Response {
    let app = s.harness.app().clone();
    Json(serde_json::json!({
        "status": "ok",
        "program_version": app.program().version,
        "store_version": app.store().version(),
    }))
    .into_response()
}

async fn stats(State(s): State<ControlState>) -> Response {
    match &s.shadower {
        Some(sh) => Json(sh.stats()).into_response(),
        None => error(StatusCode::NOT_FOUND, "no-shadower", "this harness has no proxy in front".into()),
    }
}

async fn failures(State(s): State<ControlState>) -> Response {
    let h = s.harness.clone();
    Json(blocking(move || h.failures()).await).into_response()
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    order: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

/// `"` + 16 hex digits of the body's SHA-256 + `"`.
fn etag(body: &[u8]) -> String {
    format!("\"{}\"", &hex::encode(Sha256::digest(body))[..16])
}

async fn patches(State(s): State<ControlState>, Query(q): Query<PageQuery>, headers: HeaderMap) -> Response {
    if let Some(o) = q.order.as_deref().filter(|o| *o != "rank") {
        return error(StatusCode::BAD_REQUEST, "bad-order", format!("unknown order `{o}`; only `rank`"));
    }
    let h = s.harness.clone();
    let ranked = blocking(move || h.ranked_report()).await;
    let total = ranked.len();
    let page: Vec<_> = ranked
        .into_iter()
        .skip(q.offset.unwrap_or(0))
        .take(q.limit.unwrap_or(usize::MAX))
        .collect();
    let body = serde_json::to_vec(&page).expect("ranked entries serialize");
    let tag = etag(&body);
    let cached = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == tag || t.trim() == "*"));
    let mut resp = if cached {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        ([(header::CONTENT_TYPE, "application/json")], body).into_response()
    };
    let h = resp.headers_mut();
    h.insert(header::ETAG, tag.parse().expect("hex is a valid header"));
    h.insert("x-total-count", total.into());
    resp
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchDetail {
    #[serde(flatten)]
    pub patch: CandidatePatch,
    pub diff: String,
}

async fn patch(State(s): State<ControlState>, Path(id): Path<String>) -> Response {
    let h = s.harness.clone();
    let found = blocking(move || {
        let p = h.patch(&id)?;
        let base = h.app().program_version(p.origin_version).unwrap_or_else(|| h.app().program());
        let diff = render_diff(&base, &p).unwrap_or_default();
        Some(PatchDetail { patch: p, diff })
    })
    .await;
    match found {
        Some(d) => Json(d).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown-patch", "no such patch".into()),
    }
}

fn decision_error(e: DecisionError) -> Response {
    match e {
        DecisionError::UnknownPatch(_) => error(StatusCode::NOT_FOUND, "unknown-patch", e.to_string()),
        DecisionError::WrongState(_) => error(StatusCode::CONFLICT, "wrong-state", e.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ack {
    pub patch_id: String,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

async fn approve(State(s): State<ControlState>, Path(id): Path<String>) -> Response {
    let h = s.harness.clone();
    let pid = id.clone();
    match blocking(move || h.approve(&pid)).await {
        Ok(v) => Json(Ack {
            patch_id: id,
            state: "approved".into(),
            version: Some(v),
        })
        .into_response(),
        Err(e) => decision_error(e),
    }
}

async fn reject(State(s): State<ControlState>, Path(id): Path<String>) -> Response {
    let h = s.harness.clone();
    let pid = id.clone();
    match blocking(move || h.reject(&pid)).await {
        Ok(()) => Json(Ack {
            patch_id: id,
            state: "rejected".into(),
            version: None,
        })
        .into_response(),
        Err(e) => decision_error(e),
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// First record to send; defaults to the end of the log at subscription.
    cursor: Option<u64>,
    heartbeat_ms: Option<u64>,
}

/// Newline-delimited JSON: one line per record, and `{"type":"heartbeat","cursor":n}`
/// after each quiet interval, `n` being the cursor to resume from.
async fn events(State(s): State<ControlState>, Query(q): Query<EventsQuery>) -> Response {
    let log = s.harness.events().clone();
    let cursor = q.cursor.unwrap_or_else(|| log.end());
    let beat = q.heartbeat_ms.map_or(DEFAULT_HEARTBEAT, Duration::from_millis);
    let stream = futures::stream::unfold(cursor, move |cursor| {
        let log = log.clone();
        async move {
            let records = blocking(move || log.wait_since(cursor, beat)).await;
            let (chunk, next) = match records.last() {
                None => (format!("{{\"type\":\"heartbeat\",\"cursor\":{cursor}}}\n"), cursor),
                Some(last) => {
                    let lines: String = records
                        .iter()
                        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
                        .collect();
                    (lines, last.cursor + 1)
                }
            };
            Some((Ok::<_, Infallible>(Bytes::from(chunk)), next))
        }
    });
    (
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CACHE_CONTROL, "no-cache"),
        ],
        Body::from_stream(stream),
    )
        .into_response()
}
