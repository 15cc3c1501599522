//! The whole loop in one process: production answers, the request oracle routes the
//! pair, failures feed the patch search, successes feed the regression queue.
//!
//! All methods take `&self`. Failure counting and routing never wait for a patch
//! search: the search runs outside every lock and only its result is committed.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use hpl::{ExecLimits, Program, RequestEnvelope, ResponseEnvelope};
use serde::{Deserialize, Serialize};

use crate::app::{exception_meta, header_u64, App, PROGRAM_VERSION_HEADER, STORE_VERSION_HEADER};
use crate::events::{Branch, Event, EventLog};
use crate::oracles::{request_oracle_status, DivergenceReport, Oracle, ScrubRules};
use crate::patch::{human_patch, ApplyError, CandidatePatch, PatchModel, PatchState};
use crate::patch_service::{
    search, Classification, Exploration, PatchService, SandboxContext, UnknownSignature,
};
use crate::regression::{DecisionError, RankedEntry, Reference, RegressionService};
use crate::signature::Signature;

#[derive(Clone, Debug)]
pub struct HarnessConfig {
    /// Comparison oracle of the regression queue.
    pub oracle: Oracle,
    pub rules: ScrubRules,
    pub limits: ExecLimits,
    /// Artificial delay at the start of every patch search.
    pub search_delay: Duration,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            oracle: Oracle::Content,
            rules: ScrubRules::default(),
            limits: ExecLimits::default(),
            search_delay: Duration::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub signature: Signature,
    pub count: u64,
    pub explored: bool,
    pub reproducible: Option<bool>,
    pub first_request: String,
    pub patches: BTreeMap<PatchModel, Classification>,
}

/// The request oracle applied to a production response: a 5xx or an attached exception.
pub fn is_failing(resp: &ResponseEnvelope) -> bool {
    !request_oracle_status(resp).passed || exception_meta(resp).is_some()
}

#[derive(Debug)]
pub struct Harness {
    app: Arc<App>,
    events: Arc<EventLog>,
    failures: Mutex<PatchService>,
    regression: Mutex<RegressionService>,
    config: HarnessConfig,
}

impl Harness {
    pub fn new(app: Arc<App>, config: HarnessConfig) -> Self {
        let events = Arc::new(EventLog::new());
        Harness {
            regression: Mutex::new(RegressionService::new(
                config.oracle,
                config.rules.clone(),
                events.clone(),
            )),
            failures: Mutex::new(PatchService::new()),
            app,
            events,
            config,
        }
    }

    pub fn app(&self) -> &Arc<App> {
        &self.app
    }

    pub fn events(&self) -> &Arc<EventLog> {
        &self.events
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    /// Production, then the shadow branch, synchronously. The response is production's.
    pub fn handle(&self, req: &RequestEnvelope) -> ResponseEnvelope {
        let start = Instant::now();
        let resp = self.app.handle(req);
        let latency = start.elapsed();
        match self.route(req, &resp, latency) {
            Branch::Patch => {
                self.explore_failure(req, &resp);
            }
            Branch::Regression => {
                self.on_success_request(req, &resp);
            }
        }
        resp
    }

    /// Algorithm 1's branch: logs the decision and, for a failure, counts it.
    pub fn route(&self, req: &RequestEnvelope, resp: &ResponseEnvelope, latency: Duration) -> Branch {
        let branch = if is_failing(resp) {
            Branch::Patch
        } else {
            Branch::Regression
        };
        self.events.append(Event::Routed {
            request_id: req.request_id.clone(),
            branch,
            status: resp.status,
            latency_us: latency.as_micros() as u64,
        });
        if branch == Branch::Patch {
            self.record_failure(req, resp);
        }
        branch
    }

    pub fn record_dropped(&self, req: &RequestEnvelope, branch: Branch) {
        self.events.append(Event::Dropped {
            request_id: req.request_id.clone(),
            branch,
        });
    }

    pub fn record_failure(&self, req: &RequestEnvelope, resp: &ResponseEnvelope) -> (Signature, u64) {
        let (sig, count) = self.failures.lock().expect("failures lock").record_failure(req, resp);
        self.events.append(Event::Failure {
            request_id: req.request_id.clone(),
            signature: sig.clone(),
            count,
        });
        (sig, count)
    }

    /// Searches patches for the failure of this pair if its signature is unexplored,
    /// and hands every validated patch to the regression queue. Returns the valid ones.
    pub fn explore_failure(&self, req: &RequestEnvelope, resp: &ResponseEnvelope) -> Vec<CandidatePatch> {
        let sig = Signature::of_response(resp, &req.method, req.path_only());
        let claimed = self.failures.lock().expect("failures lock").claim(&sig);
        let Some((first, first_resp)) = claimed else {
            return Vec::new();
        };
        if !self.config.search_delay.is_zero() {
            std::thread::sleep(self.config.search_delay);
        }
        let program = self.program_for(&first_resp);
        let at = header_u64(&first_resp, STORE_VERSION_HEADER).unwrap_or_else(|| self.app.store().version());
        let ctx = SandboxContext {
            program: &program,
            store: self.app.store(),
            at,
            limits: self.config.limits,
        };
        let outcome = search(&sig, &first, &ctx);
        self.failures.lock().expect("failures lock").complete(&sig, &outcome);
        match outcome {
            Ok(Exploration { spaces, .. }) => {
                let mut valid = Vec::new();
                let mut all = Vec::new();
                for space in spaces {
                    let (v, i) = space
                        .patches
                        .iter()
                        .partition::<Vec<_>, _>(|p| p.state == PatchState::Valid);
                    self.events.append(Event::Explored {
                        signature: sig.clone(),
                        model: space.model,
                        valid: v.len(),
                        invalid: i.len(),
                    });
                    valid.extend(v.into_iter().cloned());
                    all.extend(space.patches);
                }
                self.regression
                    .lock()
                    .expect("regression lock")
                    .push(all, program)
                    .expect("validated patches apply to their base");
                valid
            }
            Err(e) => {
                self.events.append(Event::Unreproducible {
                    signature: sig,
                    request_id: e.request_id,
                });
                Vec::new()
            }
        }
    }

    /// Both halves of a failing request.
    pub fn on_failing_request(&self, req: &RequestEnvelope, resp: &ResponseEnvelope) -> Vec<CandidatePatch> {
        self.record_failure(req, resp);
        self.explore_failure(req, resp)
    }

    fn program_for(&self, resp: &ResponseEnvelope) -> Arc<Program> {
        header_u64(resp, PROGRAM_VERSION_HEADER)
            .and_then(|v| self.app.program_version(v))
            .unwrap_or_else(|| self.app.program())
    }

    /// Regression step for one successful production pair.
    pub fn on_success_request(&self, req: &RequestEnvelope, resp: &ResponseEnvelope) -> Vec<DivergenceReport> {
        let reference = Reference::recover(&self.app, req, resp, self.config.oracle.needs_coverage());
        self.regression.lock().expect("regression lock").on_success_request(
            &reference,
            self.app.store(),
            self.config.limits,
        )
    }

    /// Approves a valid or surviving patch and hot-swaps production to it.
    pub fn approve(&self, id: &str) -> Result<u64, DecisionError> {
        let program = self.regression.lock().expect("regression lock").approve(id)?;
        let version = self.app.publish((*program).clone());
        self.events.append(Event::Deployed {
            patch_id: id.to_string(),
            version,
        });
        Ok(version)
    }

    pub fn reject(&self, id: &str) -> Result<(), DecisionError> {
        self.regression.lock().expect("regression lock").reject(id)
    }

    /// A developer's replacement for one method, queued directly as valid.
    pub fn validate_human_patch(
        &self,
        method: &str,
        source: &str,
        signature: Option<Signature>,
    ) -> Result<CandidatePatch, ApplyError> {
        let program = self.app.program();
        let sig = signature.unwrap_or_else(|| Signature::new("human", "-", "-"));
        let mut patch = human_patch(&program, method, source, sig)?;
        patch.transition(PatchState::Valid).expect("fresh patch");
        self.regression
            .lock()
            .expect("regression lock")
            .push(vec![patch.clone()], program)?;
        Ok(patch)
    }

    /// Failure records, most frequent first.
    pub fn failures(&self) -> Vec<FailureSummary> {
        let svc = self.failures.lock().expect("failures lock");
        let mut out: Vec<FailureSummary> = svc
            .records()
            .map(|r| FailureSummary {
                signature: r.signature.clone(),
                count: r.failure_count,
                explored: r.explored,
                reproducible: r.reproducible,
                first_request: r.first_request.request_id.clone(),
                patches: svc.classification(&r.signature).unwrap_or_default(),
            })
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.signature.cmp(&b.signature)));
        out
    }

    pub fn classification(
        &self,
        sig: &Signature,
    ) -> Result<BTreeMap<PatchModel, Classification>, UnknownSignature> {
        self.failures.lock().expect("failures lock").classification(sig)
    }

    pub fn failure_counts(&self) -> BTreeMap<Signature, u64> {
        self.failures.lock().expect("failures lock").failure_counts()
    }

    pub fn ranked_report(&self) -> Vec<RankedEntry> {
        let counts = self.failure_counts();
        self.regression.lock().expect("regression lock").ranked_report(&counts)
    }

    pub fn patch(&self, id: &str) -> Option<CandidatePatch> {
        self.regression.lock().expect("regression lock").patch(id).cloned()
    }

    pub fn patches(&self) -> Vec<CandidatePatch> {
        self.regression.lock().expect("regression lock").patches().cloned().collect()
    }

    pub fn queue(&self) -> Vec<String> {
        self.regression.lock().expect("regression lock").queue().to_vec()
    }

    pub fn patched_program(&self, id: &str) -> Option<Arc<Program>> {
        self.regression.lock().expect("regression lock").patched_program(id)
    }
}
