#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hpl::{RequestEnvelope, ResponseEnvelope};
use hyper::Request;
use hyper_util::client::legacy::Client as HyperClient;
use hyper_util::rt::TokioExecutor;
use serde_json::Value;
use shadowfix_core::app::SESSION_HEADER;
use shadowfix_core::workload::CookieJar;
use shadowfix_net::http::EnvelopeClient;
use shadowfix_net::{Config, Topology};

/// Every port on loopback, picked by the OS.
pub fn local_config() -> Config {
    let any = SocketAddr::from(([127, 0, 0, 1], 0));
    Config {
        listen: any,
        upstream: any,
        control: any,
        ..Config::default()
    }
}

pub async fn boot(tweak: impl FnOnce(&mut Config)) -> Topology {
    let mut c = local_config();
    tweak(&mut c);
    Topology::boot(&c).await.expect("boot")
}

/// One client session holder, as a browser would be.
pub struct Client {
    http: EnvelopeClient,
    jar: CookieJar,
    pub addr: SocketAddr,
}

impl Client {
    pub fn new(addr: SocketAddr) -> Self {
        Client {
            http: EnvelopeClient::new(SESSION_HEADER),
            jar: CookieJar::new(SESSION_HEADER),
            addr,
        }
    }

    pub async fn send(&mut self, r: &RequestEnvelope) -> ResponseEnvelope {
        let req = self.jar.prepare(r);
        let resp = self.http.send(&req, self.addr).await.expect("proxy answers");
        self.jar.observe(r, &resp);
        resp
    }

    pub fn token(&self, label: &str) -> Option<String> {
        self.jar.token(label).map(str::to_string)
    }
}

pub struct Json {
    pub status: u16,
    pub etag: Option<String>,
    pub total: Option<usize>,
    pub body: Value,
}

pub async fn call(method: &str, url: &str, if_none_match: Option<&str>) -> Json {
    let client: HyperClient<_, Full<Bytes>> =
        HyperClient::builder(TokioExecutor::new()).build_http();
    let mut b = Request::builder().method(method).uri(url);
    if let Some(t) = if_none_match {
        b = b.header("if-none-match", t);
    }
    let resp = client.request(b.body(Full::default()).unwrap()).await.expect("control answers");
    let (parts, body) = resp.into_parts();
    let bytes = body.collect().await.unwrap().to_bytes();
    let header = |n: &str| parts.headers.get(n).map(|v| v.to_str().unwrap().to_string());
    Json {
        status: parts.status.as_u16(),
        etag: header("etag"),
        total: header("x-total-count").map(|v| v.parse().unwrap()),
        body: if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).expect("json body")
        },
    }
}

pub async fn get(url: &str) -> Json {
    call("GET", url, None).await
}

pub async fn post(url: &str) -> Json {
    call("POST", url, None).await
}

/// Reads NDJSON lines from a streaming GET until `done` holds or `timeout` passes.
pub async fn read_stream(url: &str, timeout: Duration, done: impl Fn(&[Value]) -> bool) -> Vec<Value> {
    let client: HyperClient<_, Full<Bytes>> =
        HyperClient::builder(TokioExecutor::new()).build_http();
    let resp = client
        .request(Request::get(url).body(Full::default()).unwrap())
        .await
        .expect("stream opens");
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let mut body = resp.into_body();
    let mut buf = Vec::new();
    let mut lines = Vec::new();
    let deadline = tokio::time::Instant::now() + timeout;
    while !done(&lines) {
        let frame = match tokio::time::timeout_at(deadline, body.frame()).await {
            Ok(Some(Ok(f))) => f,
            _ => break,
        };
        if let Ok(data) = frame.into_data() {
            buf.extend_from_slice(&data);
            while let Some(i) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=i).collect();
                lines.push(serde_json::from_slice(&line).expect("one JSON value per line"));
            }
        }
    }
    lines
}
