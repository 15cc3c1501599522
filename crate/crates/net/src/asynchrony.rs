//! Does a slow patch search slow the client down? The same requests go through the
//! shadower twice, on fresh copies of the application: once with searches running at
//! full speed, once with every search stalled. Only failing requests start searches,
//! so their latencies are the ones compared.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hpl::{Program, RequestEnvelope};
use serde::{Deserialize, Serialize};
use shadowfix_core::app::{App, SESSION_HEADER};
use shadowfix_core::harness::{is_failing, Harness, HarnessConfig};
use shadowfix_core::store::Store;
use shadowfix_core::workload::CookieJar;

use crate::app_server;
use crate::http::EnvelopeClient;
use crate::overhead::MeasureError;
use crate::server::{bind, Server};
use crate::shadower::{Shadower, ShadowerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StallReport {
    pub requests: usize,
    pub failing: usize,
    pub stall_ms: u64,
    pub mean_failing_unstalled_ms: f64,
    pub mean_failing_stalled_ms: f64,
    /// Searches still unfinished when the stalled run's last response arrived.
    pub searches_pending_at_end: u64,
}

impl StallReport {
    pub fn ratio(&self) -> f64 {
        self.mean_failing_stalled_ms / self.mean_failing_unstalled_ms
    }
}

struct Run {
    failing: Vec<Duration>,
    pending_at_end: u64,
}

async fn run(
    program: &Program,
    store: Store,
    requests: &[RequestEnvelope],
    delay: Duration,
) -> Result<Run, MeasureError> {
    let loopback = SocketAddr::from(([127, 0, 0, 1], 0));
    let app = Arc::new(App::new(program.clone(), Arc::new(store), Default::default()));
    let (router, _) = app_server::router(app.clone(), SESSION_HEADER, "prod");
    let production = Server::spawn(bind(loopback).await?, router);
    let harness = Arc::new(Harness::new(
        app,
        HarnessConfig {
            search_delay: delay,
            ..HarnessConfig::default()
        },
    ));
    let shadower = Shadower::start(
        ShadowerConfig {
            upstream: production.addr(),
            session_header: SESSION_HEADER.into(),
            patch_queue: requests.len(),
            regression_queue: requests.len(),
            mirror_queue: 1,
            mirrors: Vec::new(),
        },
        harness,
    );
    let proxy = Server::spawn(bind(loopback).await?, shadower.router());
    let client = EnvelopeClient::new(SESSION_HEADER);
    let mut jar = CookieJar::new(SESSION_HEADER);
    let mut failing = Vec::new();
    let mut outcome = Ok(());
    for r in requests {
        let req = jar.prepare(r);
        let start = Instant::now();
        match client.send(&req, proxy.addr()).await {
            Ok(resp) => {
                let took = start.elapsed();
                if is_failing(&resp) {
                    failing.push(took);
                }
                jar.observe(r, &resp);
            }
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    let s = shadower.stats();
    let pending_at_end = s.patch_enqueued - s.patch_done;
    proxy.stop().await;
    shadower.settle().await;
    shadower.shutdown().await;
    production.stop().await;
    outcome?;
    Ok(Run {
        failing,
        pending_at_end,
    })
}

fn mean_ms(d: &[Duration]) -> f64 {
    d.iter().map(Duration::as_secs_f64).sum::<f64>() * 1000.0 / d.len().max(1) as f64
}

/// The unstalled pass first, then the stalled one.
pub async fn measure_stall(
    program: &Program,
    make_store: impl Fn() -> Store,
    requests: &[RequestEnvelope],
    stall: Duration,
) -> Result<StallReport, MeasureError> {
    let base = run(program, make_store(), requests, Duration::ZERO).await?;
    let stalled = run(program, make_store(), requests, stall).await?;
    Ok(StallReport {
        requests: requests.len(),
        failing: stalled.failing.len(),
        stall_ms: stall.as_millis() as u64,
        mean_failing_unstalled_ms: mean_ms(&base.failing),
        mean_failing_stalled_ms: mean_ms(&stalled.failing),
        searches_pending_at_end: stalled.pending_at_end,
    })
}
