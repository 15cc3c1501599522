//! The ranked report against an independent re-sort of the event log.

use std::collections::BTreeMap;

use shadowfix_core::events::{Event, Record};
use shadowfix_core::experiments::ranking::{run, RankingConfig};
use shadowfix_core::patch::PatchState;
use shadowfix_core::signature::Signature;

/// `(id, failure count, success count)` in report order, rebuilt from the log alone:
/// failures are counted by their events, a patch's state is its last state event,
/// successes are its non-diverged comparisons.
fn ranking_from_log(log: &[Record]) -> Vec<(String, u64, u64)> {
    let mut failures: BTreeMap<&Signature, u64> = BTreeMap::new();
    let mut patches: BTreeMap<&str, (&Signature, PatchState)> = BTreeMap::new();
    let mut successes: BTreeMap<&str, u64> = BTreeMap::new();
    for r in log {
        match &r.event {
            Event::Failure { signature, .. } => *failures.entry(signature).or_default() += 1,
            Event::Patch { patch_id, signature, state, .. } => {
                patches.insert(patch_id, (signature, *state));
            }
            Event::Regression { patch_id, diverged: false, .. } => {
                *successes.entry(patch_id).or_default() += 1
            }
            _ => {}
        }
    }
    let mut out: Vec<(String, u64, u64)> = patches
        .into_iter()
        .filter(|(_, (_, s))| matches!(s, PatchState::Valid | PatchState::Surviving | PatchState::Approved))
        .map(|(id, (sig, _))| {
            (
                id.to_string(),
                failures.get(sig).copied().unwrap_or(0),
                successes.get(id).copied().unwrap_or(0),
            )
        })
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    out
}

#[test]
fn three_fault_report_equals_the_log_resort() {
    let r = run(&RankingConfig::default());
    assert_eq!(r.faults.len(), 3);
    let report: Vec<(String, u64, u64)> = r
        .harness
        .ranked_report()
        .into_iter()
        .map(|e| (e.patch.id, e.failure_count, e.regression_success_count))
        .collect();
    let log = r.harness.events().all();
    assert_eq!(report, ranking_from_log(&log));

    let signatures: std::collections::BTreeSet<_> =
        r.harness.ranked_report().iter().map(|e| e.patch.signature.clone()).collect();
    assert!(signatures.len() >= 2, "the primary key separates signatures");
    let rejected = r.rejected.expect("something was ranked after the first pass");
    assert!(report.iter().all(|(id, ..)| *id != rejected));
    // Failure counts in the report are the per-signature maxima of the failure events.
    for f in r.harness.failures() {
        let last = log
            .iter()
            .filter_map(|x| match &x.event {
                Event::Failure { signature, count, .. } if *signature == f.signature => Some(*count),
                _ => None,
            })
            .max();
        assert_eq!(last, Some(f.count));
    }
}

#[test]
fn ranking_run_is_deterministic() {
    let strip = |log: Vec<Record>| -> Vec<Event> {
        log.into_iter()
            .map(|r| match r.event {
                Event::Routed { request_id, branch, status, .. } => Event::Routed {
                    request_id,
                    branch,
                    status,
                    latency_us: 0,
                },
                e => e,
            })
            .collect()
    };
    let cfg = RankingConfig::default();
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(strip(a.harness.events().all()), strip(b.harness.events().all()));
}
