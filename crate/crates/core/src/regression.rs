//! The regression queue: every valid patch is run against every duplicated successful
//! request until it diverges from production or a human decides on it.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use hpl::{ExceptionKind, ExecLimits, ExecutionResult, Program, RequestEnvelope, ResponseEnvelope};
use serde::{Deserialize, Serialize};

use crate::app::{header_u64, run_sandboxed, App, PROGRAM_VERSION_HEADER, STORE_VERSION_HEADER};
use crate::events::{Event, EventLog};
use crate::oracles::{compare, DivergenceReport, Observed, Oracle, ScrubRules};
use crate::patch::{diff_programs, ApplyError, CandidatePatch, PatchState, WrongState};
use crate::signature::Signature;
use crate::store::Store;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DecisionError {
    #[error("unknown patch {0}")]
    UnknownPatch(String),
    #[error(transparent)]
    WrongState(#[from] WrongState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub patch: CandidatePatch,
    pub failure_count: u64,
    pub regression_success_count: u64,
    pub diff: String,
}

/// The reference side of a regression comparison.
pub struct Reference<'a> {
    pub request: &'a RequestEnvelope,
    /// Production's response.
    pub output: &'a ResponseEnvelope,
    /// Store version production observed.
    pub at: u64,
    /// Production's coverage, recovered by a sandboxed re-execution of the production
    /// program. Only needed by coverage oracles.
    pub coverage: Option<hpl::CoverageTrace>,
}

impl<'a> Reference<'a> {
    /// Builds the reference for a production pair. Coverage is recovered only when
    /// `with_coverage` is set.
    pub fn recover(
        app: &App,
        request: &'a RequestEnvelope,
        output: &'a ResponseEnvelope,
        with_coverage: bool,
    ) -> Self {
        let at = header_u64(output, STORE_VERSION_HEADER).unwrap_or_else(|| app.store().version());
        let coverage = with_coverage.then(|| {
            let program = header_u64(output, PROGRAM_VERSION_HEADER)
                .and_then(|v| app.program_version(v))
                .unwrap_or_else(|| app.program());
            let (result, _) = run_sandboxed(&program, request, app.store(), at, app.limits());
            result.map(|r| r.coverage).unwrap_or_default()
        });
        Reference {
            request,
            output,
            at,
            coverage,
        }
    }
}

/// Runs `patched` on the reference request and compares it under each oracle. A
/// timeout diverges under every oracle.
pub fn compare_patched(
    patched: &Program,
    reference: &Reference<'_>,
    store: &Store,
    limits: ExecLimits,
    rules: &ScrubRules,
    oracles: &[Oracle],
) -> (Vec<DivergenceReport>, Option<ExecutionResult>) {
    let (result, resp) = run_sandboxed(patched, reference.request, store, reference.at, limits);
    let result = result.ok();
    let timed_out = result
        .as_ref()
        .and_then(|r| r.failure())
        .is_some_and(|f| f.kind == ExceptionKind::Timeout);
    let id = &reference.request.request_id;
    let reports = oracles
        .iter()
        .map(|&o| {
            let mut r = compare(
                o,
                id,
                &Observed {
                    response: reference.output,
                    coverage: reference.coverage.as_ref(),
                },
                &Observed {
                    response: &resp,
                    coverage: result.as_ref().map(|r| &r.coverage),
                },
                rules,
            );
            if timed_out {
                r.diverged = true;
                r.magnitude = 1.0;
            }
            r
        })
        .collect();
    (reports, result)
}

#[derive(Debug)]
pub struct RegressionService {
    pub oracle: Oracle,
    pub rules: ScrubRules,
    patches: BTreeMap<String, CandidatePatch>,
    /// Q, in arrival order.
    queue: Vec<String>,
    programs: HashMap<String, Arc<Program>>,
    /// Programs the patches were generated against, for diffs.
    bases: HashMap<String, Arc<Program>>,
    events: Arc<EventLog>,
}

impl RegressionService {
    pub fn new(oracle: Oracle, rules: ScrubRules, events: Arc<EventLog>) -> Self {
        RegressionService {
            oracle,
            rules,
            patches: BTreeMap::new(),
            queue: Vec::new(),
            programs: HashMap::new(),
            bases: HashMap::new(),
            events,
        }
    }

    fn log_state(&self, p: &CandidatePatch, reason: &str) {
        self.events.append(Event::Patch {
            patch_id: p.id.clone(),
            signature: p.signature.clone(),
            state: p.state,
            reason: reason.to_string(),
        });
    }

    /// Registers validated patches. Valid ones join Q, each exactly once.
    pub fn push(&mut self, patches: Vec<CandidatePatch>, base: Arc<Program>) -> Result<(), ApplyError> {
        for p in patches {
            if self.patches.contains_key(&p.id) {
                continue;
            }
            self.log_state(&p, "");
            if p.state == PatchState::Valid {
                let program = p.apply(&base)?;
                self.programs.insert(p.id.clone(), Arc::new(program));
                self.queue.push(p.id.clone());
            }
            self.bases.insert(p.id.clone(), base.clone());
            self.patches.insert(p.id.clone(), p);
        }
        Ok(())
    }

    pub fn queue(&self) -> &[String] {
        &self.queue
    }

    pub fn patch(&self, id: &str) -> Option<&CandidatePatch> {
        self.patches.get(id)
    }

    pub fn patches(&self) -> impl Iterator<Item = &CandidatePatch> {
        self.patches.values()
    }

    pub fn patched_program(&self, id: &str) -> Option<Arc<Program>> {
        self.programs.get(id).cloned()
    }

    /// One successful production pair against every patch in Q (as of entry). Diverging
    /// patches become regressive and leave Q; the others count one more success.
    pub fn on_success_request(
        &mut self,
        reference: &Reference<'_>,
        store: &Store,
        limits: ExecLimits,
    ) -> Vec<DivergenceReport> {
        let snapshot = self.queue.clone();
        let mut reports = Vec::with_capacity(snapshot.len());
        for id in snapshot {
            let program = self.programs[&id].clone();
            let (mut r, _) =
                compare_patched(&program, reference, store, limits, &self.rules, &[self.oracle]);
            let report = r.remove(0).with_patch(&id);
            self.events.append(Event::Regression {
                request_id: report.request_id.clone(),
                patch_id: id.clone(),
                oracle: report.oracle,
                diverged: report.diverged,
                magnitude: report.magnitude,
            });
            let p = self.patches.get_mut(&id).expect("queued patch is registered");
            if report.diverged {
                p.transition(PatchState::Regressive).expect("queued patch can regress");
                self.queue.retain(|q| q != &id);
                let p = p.clone();
                self.log_state(&p, &format!("diverged on {}", report.request_id));
            } else {
                p.regression_success_count += 1;
                if p.state == PatchState::Valid {
                    p.transition(PatchState::Surviving).expect("valid can survive");
                    let p = p.clone();
                    self.log_state(&p, "");
                }
            }
            reports.push(report);
        }
        reports
    }

    /// Marks the patch approved and returns its program. Sibling patches of the same
    /// failure leave Q as rejected.
    pub fn approve(&mut self, id: &str) -> Result<Arc<Program>, DecisionError> {
        let p = self
            .patches
            .get_mut(id)
            .ok_or_else(|| DecisionError::UnknownPatch(id.to_string()))?;
        p.transition(PatchState::Approved)?;
        let sig = p.signature.clone();
        let p = p.clone();
        self.log_state(&p, "");
        self.queue.retain(|q| q != id);
        let siblings: Vec<String> = self
            .queue
            .iter()
            .filter(|q| self.patches[*q].signature == sig)
            .cloned()
            .collect();
        for s in siblings {
            self.retire(&s, "superseded")?;
        }
        Ok(self.programs[id].clone())
    }

    pub fn reject(&mut self, id: &str) -> Result<(), DecisionError> {
        if !self.patches.contains_key(id) {
            return Err(DecisionError::UnknownPatch(id.to_string()));
        }
        self.retire(id, "")
    }

    fn retire(&mut self, id: &str, reason: &str) -> Result<(), DecisionError> {
        let p = self.patches.get_mut(id).expect("checked");
        p.transition(PatchState::Rejected)?;
        let p = p.clone();
        self.log_state(&p, reason);
        self.queue.retain(|q| q != id);
        Ok(())
    }

    /// Ranked by failure count, then regression success count, both descending, then id.
    /// Regressive, invalid and rejected patches are left out.
    pub fn ranked_report(&self, failure_counts: &BTreeMap<Signature, u64>) -> Vec<RankedEntry> {
        let mut out: Vec<RankedEntry> = self
            .patches
            .values()
            .filter(|p| p.state.ranked())
            .map(|p| {
                let diff = match (self.bases.get(&p.id), self.programs.get(&p.id)) {
                    (Some(b), Some(a)) => diff_programs(b, a),
                    _ => String::new(),
                };
                RankedEntry {
                    failure_count: failure_counts.get(&p.signature).copied().unwrap_or(0),
                    regression_success_count: p.regression_success_count,
                    patch: p.clone(),
                    diff,
                }
            })
            .collect();
        out.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));
        out
    }
}

fn rank_key(e: &RankedEntry) -> (std::cmp::Reverse<u64>, std::cmp::Reverse<u64>, &str) {
    (
        std::cmp::Reverse(e.failure_count),
        std::cmp::Reverse(e.regression_success_count),
        &e.patch.id,
    )
}
