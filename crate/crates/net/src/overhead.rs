//! Client-observed latency with and without the shadower in front of production.
//!
//! The same request sequence is sent twice, sequentially, each time to a fresh copy of
//! the application over loopback: once straight to production, once through the
//! shadower with its whole shadow side running.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hpl::{Program, RequestEnvelope};
use serde::{Deserialize, Serialize};
use shadowfix_core::app::{App, SESSION_HEADER};
use shadowfix_core::harness::{Harness, HarnessConfig};
use shadowfix_core::store::Store;
use shadowfix_core::workload::{generate, CookieJar};

use crate::app_server;
use crate::http::{ClientError, EnvelopeClient};
use crate::server::{bind, BindError, Server};
use crate::shadower::{Shadower, ShadowerConfig, ShadowerStats};

pub const DEFAULT_REQUESTS: usize = 10_000;
/// Simulated cost of one store operation, standing in for a database round trip.
pub const DEFAULT_STORE_OP_LATENCY: Duration = Duration::from_millis(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub requests: usize,
    pub store_op_latency_us: u64,
    pub mean_direct_ms: f64,
    pub mean_proxied_ms: f64,
    pub overhead_pct: f64,
    /// The shadower's counters once its queues drained.
    pub shadower: ShadowerStats,
}

impl OverheadReport {
    pub fn to_text(&self) -> String {
        format!(
            "requests            {}\nstore op latency    {} us\nmean direct         {:.3} ms\n\
             mean proxied        {:.3} ms\noverhead            {:.2} %\n\
             routed              {} regression, {} patch, {} dropped\n",
            self.requests,
            self.store_op_latency_us,
            self.mean_direct_ms,
            self.mean_proxied_ms,
            self.overhead_pct,
            self.shadower.regression_enqueued,
            self.shadower.patch_enqueued,
            self.shadower.regression_dropped + self.shadower.patch_dropped,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// `n` shop requests: the workloads of seeds `seed`, `seed + 1`, ... back to back.
pub fn shop_requests(n: usize, seed: u64) -> Vec<RequestEnvelope> {
    let mut out = Vec::with_capacity(n);
    let mut s = seed;
    while out.len() < n {
        let w = generate("shop", s).expect("bundled profile");
        out.extend(w.requests().take(n - out.len()).cloned());
        s += 1;
    }
    out
}

/// Sends `requests` in order as one client with a cookie jar; returns per-request
/// latencies.
async fn send_all(addr: SocketAddr, requests: &[RequestEnvelope]) -> Result<Vec<Duration>, ClientError> {
    let client = EnvelopeClient::new(SESSION_HEADER);
    let mut jar = CookieJar::new(SESSION_HEADER);
    let mut out = Vec::with_capacity(requests.len());
    for r in requests {
        let req = jar.prepare(r);
        let start = Instant::now();
        let resp = client.send(&req, addr).await?;
        out.push(start.elapsed());
        jar.observe(r, &resp);
    }
    Ok(out)
}

fn mean_ms(d: &[Duration]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().map(Duration::as_secs_f64).sum::<f64>() * 1000.0 / d.len() as f64
}

fn fresh_app(program: &Program, store: Store, op_latency: Duration) -> Arc<App> {
    store.set_op_latency(op_latency);
    Arc::new(App::new(program.clone(), Arc::new(store), Default::default()))
}

/// Runs the direct pass, then the proxied pass, on two fresh apps.
pub async fn measure_overhead(
    program: &Program,
    make_store: impl Fn() -> Store,
    requests: &[RequestEnvelope],
    op_latency: Duration,
) -> Result<OverheadReport, MeasureError> {
    let loopback = SocketAddr::from(([127, 0, 0, 1], 0));

    let direct_app = fresh_app(program, make_store(), op_latency);
    let (router, _) = app_server::router(direct_app, SESSION_HEADER, "direct");
    let direct = Server::spawn(bind(loopback).await?, router);
    let direct_times = send_all(direct.addr(), requests).await;
    direct.stop().await;
    let direct_times = direct_times?;

    let app = fresh_app(program, make_store(), op_latency);
    let (router, _) = app_server::router(app.clone(), SESSION_HEADER, "prod");
    let production = Server::spawn(bind(loopback).await?, router);
    let harness = Arc::new(Harness::new(app, HarnessConfig::default()));
    let shadower = Shadower::start(
        ShadowerConfig {
            upstream: production.addr(),
            session_header: SESSION_HEADER.into(),
            patch_queue: 64,
            regression_queue: 4096,
            mirror_queue: 1,
            mirrors: Vec::new(),
        },
        harness,
    );
    let proxy = Server::spawn(bind(loopback).await?, shadower.router());
    let proxied_times = send_all(proxy.addr(), requests).await;
    proxy.stop().await;
    shadower.settle().await;
    let stats = shadower.stats();
    shadower.shutdown().await;
    production.stop().await;
    let proxied_times = proxied_times?;

    let (d, p) = (mean_ms(&direct_times), mean_ms(&proxied_times));
    Ok(OverheadReport {
        requests: requests.len(),
        store_op_latency_us: op_latency.as_micros() as u64,
        mean_direct_ms: d,
        mean_proxied_ms: p,
        overhead_pct: if d > 0.0 { (p - d) / d * 100.0 } else { 0.0 },
        shadower: stats,
    })
}
