//! Patch generation under repeated failures: seed one null fault at a time, send
//! production traffic until the fault fires, then resend the failing request in a loop
//! and classify both search spaces.

use std::collections::BTreeSet;
use std::sync::Arc;

use hpl::{ExecLimits, Location};
use serde::{Deserialize, Serialize};

use super::Table;
use crate::app::{App, SESSION_HEADER};
use crate::faults::{covered_checks, seed_null_fault, verify_fault_triggers, workload_coverage};
use crate::harness::{is_failing, Harness, HarnessConfig};
use crate::patch::PatchModel;
use crate::patch_service::Classification;
use crate::profile::profile;
use crate::signature::Signature;
use crate::workload::{generate, CookieJar};

#[derive(Clone, Debug)]
pub struct Rq1Config {
    pub faults: usize,
    pub seed: u64,
    pub workload_seed: u64,
    /// Extra sends of the failing request after the first failure.
    pub loops: u64,
    pub limits: ExecLimits,
}

impl Default for Rq1Config {
    fn default() -> Self {
        Rq1Config {
            faults: 10,
            seed: 1,
            workload_seed: 42,
            loops: 4,
            limits: ExecLimits::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    pub fault: String,
    /// The seed that selected this fault.
    pub seed: u64,
    pub location: Location,
    pub signature: Signature,
    pub failing_request: String,
    pub failure_count: u64,
    pub null_recovery: Classification,
    pub exception_stopper: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub seed: u64,
    pub workload_seed: u64,
    /// Checks some workload request executes; the sampling population.
    pub covered_checks: usize,
    /// Seeds tried, including those that hit an already chosen or silent check.
    pub seeds_tried: u64,
    pub rows: Vec<Rq1Row>,
    pub totals: Rq1Totals,
    pub base_digest_before: String,
    pub base_digest_after: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rq1Totals {
    pub null_recovery: Classification,
    pub exception_stopper: Classification,
}

/// Fault selection: seeds `seed, seed+1, ...` each sample one covered check; a check is
/// kept if it is new and the workload triggers it. Stops after `faults` faults or when
/// every covered check has been considered.
pub fn select_faults(config: &Rq1Config) -> (Vec<(u64, Location)>, usize, u64) {
    let prof = profile("shop").expect("bundled profile");
    let program = prof.program();
    let store = prof.store();
    let workload = generate("shop", config.workload_seed).expect("bundled profile");
    let covered = covered_checks(&program, &workload_coverage(&program, &store, &workload, config.limits));
    let mut seen = BTreeSet::new();
    let mut chosen = Vec::new();
    let mut seed = config.seed;
    while chosen.len() < config.faults && seen.len() < covered.len() {
        let (faulted, fault) = seed_null_fault(&program, &covered, seed).expect("covered checks are eligible");
        if seen.insert(fault.location)
            && verify_fault_triggers(&program, &faulted, &store, &workload, config.limits)
        {
            chosen.push((seed, fault.location));
        }
        seed += 1;
    }
    (chosen, covered.len(), seed - config.seed)
}

pub fn run(config: &Rq1Config) -> Rq1Report {
    let prof = profile("shop").expect("bundled profile");
    let program = prof.program();
    let base = prof.store();
    let base_digest_before = base.digest();
    let workload = generate("shop", config.workload_seed).expect("bundled profile");
    let (chosen, covered, tried) = select_faults(config);
    let mut rows = Vec::new();
    for (seed, loc) in chosen {
        let (faulted, fault) = crate::faults::apply_fault(&program, loc).expect("selected check");
        let app = Arc::new(App::new(faulted, Arc::new(base.fork_at(base.version())), config.limits));
        let harness = Harness::new(app, HarnessConfig::default());
        let mut jar = CookieJar::new(SESSION_HEADER);
        let mut first = None;
        for r in workload.requests() {
            let req = jar.prepare(r);
            let resp = harness.handle(&req);
            jar.observe(r, &resp);
            if is_failing(&resp) {
                first = Some((req, resp));
                break;
            }
        }
        let (req, resp) = first.expect("selected faults trigger on the workload");
        let sig = Signature::of_response(&resp, &req.method, req.path_only());
        for _ in 0..config.loops {
            harness.handle(&req);
        }
        let classes = harness.classification(&sig).expect("failure was explored");
        let count = harness.failure_counts().get(&sig).copied().unwrap_or(0);
        rows.push(Rq1Row {
            fault: fault.id,
            seed,
            location: loc,
            signature: sig,
            failing_request: req.request_id,
            failure_count: count,
            null_recovery: classes[&PatchModel::NullRecovery],
            exception_stopper: classes[&PatchModel::ExceptionStopper],
        });
    }
    let mut totals = Rq1Totals::default();
    for r in &rows {
        totals.null_recovery.valid += r.null_recovery.valid;
        totals.null_recovery.invalid += r.null_recovery.invalid;
        totals.exception_stopper.valid += r.exception_stopper.valid;
        totals.exception_stopper.invalid += r.exception_stopper.invalid;
    }
    Rq1Report {
        seed: config.seed,
        workload_seed: config.workload_seed,
        covered_checks: covered,
        seeds_tried: tried,
        rows,
        totals,
        base_digest_before,
        base_digest_after: base.digest(),
    }
}

impl Rq1Report {
    pub fn to_text(&self) -> String {
        let mut t = Table::new(&[
            "fault", "seed", "signature", "failures", "NR valid", "NR invalid", "ES valid", "ES invalid",
        ]);
        for r in &self.rows {
            t.row(vec![
                r.fault.clone(),
                r.seed.to_string(),
                r.signature.to_string(),
                r.failure_count.to_string(),
                r.null_recovery.valid.to_string(),
                r.null_recovery.invalid.to_string(),
                r.exception_stopper.valid.to_string(),
                r.exception_stopper.invalid.to_string(),
            ]);
        }
        let t0 = &self.totals;
        t.row(vec![
            "total".into(),
            String::new(),
            String::new(),
            String::new(),
            t0.null_recovery.valid.to_string(),
            t0.null_recovery.invalid.to_string(),
            t0.exception_stopper.valid.to_string(),
            t0.exception_stopper.invalid.to_string(),
        ]);
        format!(
            "faults: {} (seed {}, {} seeds tried, {} covered checks, workload seed {})\n\n{}\nbase store digest: {} -> {}\n",
            self.rows.len(),
            self.seed,
            self.seeds_tried,
            self.covered_checks,
            self.workload_seed,
            t.render(),
            self.base_digest_before,
            self.base_digest_after,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
