//! Envelopes to and from HTTP, and a pooled HTTP/1.1 client.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hpl::{RequestEnvelope, ResponseEnvelope};
use hyper::header::{HeaderMap, HeaderName, HeaderValue};
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;

pub const REQUEST_ID_HEADER: &str = "x-request-id";
/// Milliseconds since the epoch at which the client-facing hop received the request.
pub const RECEIVED_AT_HEADER: &str = "x-received-at";

/// Connection-level headers and the two metadata headers above: none of them is part
/// of an envelope's header list.
const NOT_ENVELOPE: [&str; 8] = [
    "host",
    "connection",
    "keep-alive",
    "content-length",
    "transfer-encoding",
    "upgrade",
    REQUEST_ID_HEADER,
    RECEIVED_AT_HEADER,
];

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Issues ids `<prefix>-<n>` for requests that arrive without one.
#[derive(Debug)]
pub struct RequestIds {
    prefix: String,
    next: AtomicU64,
}

impl RequestIds {
    pub fn new(prefix: &str) -> Self {
        RequestIds {
            prefix: prefix.to_string(),
            next: AtomicU64::new(0),
        }
    }

    pub fn issue(&self) -> String {
        format!("{}-{}", self.prefix, self.next.fetch_add(1, Ordering::Relaxed))
    }
}

/// The envelope of an incoming request. Id and receive time come from the metadata
/// headers when present.
pub fn request_envelope(
    method: &Method,
    path: &str,
    headers: &HeaderMap,
    body: Bytes,
    session_header: &str,
    ids: &RequestIds,
) -> RequestEnvelope {
    let get = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    let mut env = RequestEnvelope::new(
        get(REQUEST_ID_HEADER).map_or_else(|| ids.issue(), str::to_string),
        method.as_str(),
        path,
    )
    .with_body(body.to_vec())
    .with_session(get(session_header).map(str::to_string))
    .at(get(RECEIVED_AT_HEADER).and_then(|v| v.parse().ok()).unwrap_or_else(now_ms));
    env.headers = headers
        .iter()
        .filter(|(k, _)| !NOT_ENVELOPE.contains(&k.as_str()) && k.as_str() != session_header)
        .filter_map(|(k, v)| Some((k.as_str().to_string(), v.to_str().ok()?.to_string())))
        .collect();
    env
}

/// The HTTP request that carries `env` to `addr`, metadata headers included.
pub fn to_http_request(env: &RequestEnvelope, addr: SocketAddr, session_header: &str) -> Request<Full<Bytes>> {
    let mut b = Request::builder()
        .method(env.method.as_str())
        .uri(format!("http://{addr}{}", env.path))
        .header(REQUEST_ID_HEADER, &env.request_id)
        .header(RECEIVED_AT_HEADER, env.received_at_ms.to_string());
    for (k, v) in &env.headers {
        b = b.header(k, v);
    }
    if let Some(s) = &env.session_id {
        b = b.header(session_header, s);
    }
    b.body(Full::new(Bytes::from(env.body.clone())))
        .expect("envelope fields are valid HTTP")
}

pub fn response_envelope(status: StatusCode, headers: &HeaderMap, body: Bytes) -> ResponseEnvelope {
    let mut env = ResponseEnvelope::new(status.as_u16(), body.to_vec());
    env.produced_at_ms = now_ms();
    env.headers = headers
        .iter()
        .filter(|(k, _)| !NOT_ENVELOPE.contains(&k.as_str()))
        .filter_map(|(k, v)| Some((k.as_str().to_string(), v.to_str().ok()?.to_string())))
        .collect();
    env.exception = shadowfix_core::app::exception_meta(&env);
    env
}

pub fn to_http_response(env: &ResponseEnvelope) -> Response<axum::body::Body> {
    let mut resp = Response::new(axum::body::Body::from(env.body.clone()));
    *resp.status_mut() = StatusCode::from_u16(env.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    for (k, v) in &env.headers {
        if let (Ok(k), Ok(v)) = (HeaderName::try_from(k.as_str()), HeaderValue::try_from(v.as_str())) {
            resp.headers_mut().append(k, v);
        }
    }
    resp
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Send(#[from] hyper_util::client::legacy::Error),
    #[error("reading the body failed: {0}")]
    Body(#[from] hyper::Error),
}

/// Keep-alive client for envelope exchanges.
#[derive(Clone, Debug)]
pub struct EnvelopeClient {
    inner: Client<HttpConnector, Full<Bytes>>,
    session_header: String,
}

impl EnvelopeClient {
    pub fn new(session_header: &str) -> Self {
        let mut connector = HttpConnector::new();
        connector.set_nodelay(true);
        EnvelopeClient {
            inner: Client::builder(TokioExecutor::new()).build(connector),
            session_header: session_header.to_string(),
        }
    }

    pub async fn send(&self, env: &RequestEnvelope, addr: SocketAddr) -> Result<ResponseEnvelope, ClientError> {
        self.send_raw(to_http_request(env, addr, &self.session_header)).await
    }

    pub async fn send_raw(&self, req: Request<Full<Bytes>>) -> Result<ResponseEnvelope, ClientError> {
        let resp = self.inner.request(req).await?;
        let (parts, body) = resp.into_parts();
        let body = body.collect().await?.to_bytes();
        Ok(response_envelope(parts.status, &parts.headers, body))
    }

    pub async fn get(&self, url: &str) -> Result<ResponseEnvelope, ClientError> {
        let req = Request::get(url).body(Full::default()).expect("valid url");
        self.send_raw(req).await
    }

    pub async fn post(&self, url: &str) -> Result<ResponseEnvelope, ClientError> {
        let req = Request::post(url).body(Full::default()).expect("valid url");
        self.send_raw(req).await
    }
}
