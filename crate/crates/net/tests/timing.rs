//! Client latency under shadow load. Timing-sensitive, so kept apart from the rest.

use std::time::Duration;

use hpl::RequestEnvelope;
use shadowfix_core::experiments::ranking::{faulted_program, RankingConfig};
use shadowfix_core::profile::profile;
use shadowfix_core::store::Store;
use shadowfix_net::asynchrony::measure_stall;
use shadowfix_net::overhead::{measure_overhead, shop_requests};

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn a_stalled_patch_search_does_not_slow_failing_requests() {
    let (program, _) = faulted_program(&RankingConfig::default());
    let prof = profile("shop").unwrap();
    let requests = shop_requests(200, 42);
    let r = measure_stall(&program, || prof.store(), &requests, Duration::from_millis(500))
        .await
        .unwrap();
    println!("{r:?}");
    assert!(r.failing >= 10, "{r:?}");
    // The stall was live: searches were still queued behind it when traffic ended.
    assert!(r.searches_pending_at_end > 0, "{r:?}");
    assert!(r.ratio() <= 2.0, "{r:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn overhead_of_an_echo_handler_is_finite_and_reported() {
    let echo = hpl::parse("method echo(req: record) {\n    respond(200, \"ok\");\n}\n\nroutes {\n    GET / -> echo\n}\n")
        .unwrap();
    let requests: Vec<_> = (0..50).map(|i| RequestEnvelope::new(format!("e{i}"), "GET", "/")).collect();
    let r = measure_overhead(&echo, Store::new, &requests, Duration::ZERO).await.unwrap();
    assert_eq!(r.requests, 50);
    assert!(r.mean_direct_ms > 0.0 && r.mean_proxied_ms > 0.0);
    assert!(r.overhead_pct.is_finite());
    assert_eq!(r.shadower.regression_enqueued, 50);
    assert!(r.to_text().contains("overhead"));
    let back: shadowfix_net::overhead::OverheadReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}
