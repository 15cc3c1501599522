//! Failure records and patch search: reproduce a failing request in a sandbox, enumerate
//! both patch models, and validate every candidate by replaying the request.

use std::collections::BTreeMap;

use hpl::{ExecLimits, Failure, Program, RequestEnvelope, ResponseEnvelope};
use serde::{Deserialize, Serialize};

use crate::app::run_sandboxed;
use crate::oracles::{request_oracle_exception, request_oracle_status};
use crate::patch::{
    enumerate_exception_stopper, enumerate_null_recovery, CandidatePatch, PatchModel, PatchState,
    SearchSpace,
};
use crate::signature::Signature;
use crate::store::Store;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub signature: Signature,
    pub failure_count: u64,
    pub first_request: RequestEnvelope,
    /// Production's answer to the first request; pins program and store versions.
    pub first_response: ResponseEnvelope,
    pub explored: bool,
    /// `Some(false)` when the sandbox could not reproduce the failure.
    pub reproducible: Option<bool>,
    /// Validation outcome per model: `(valid ids, invalid ids)` in enumeration order.
    pub spaces: BTreeMap<PatchModel, (Vec<String>, Vec<String>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("sandboxed replay of {request_id} did not reproduce {signature}: {observed}")]
pub struct ReExecutionMismatch {
    pub request_id: String,
    pub signature: Signature,
    pub observed: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no explored failure with signature {0}")]
pub struct UnknownSignature(pub Signature);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub valid: usize,
    pub invalid: usize,
}

/// What a failing request is replayed against.
pub struct SandboxContext<'a> {
    /// The program version that produced the failure.
    pub program: &'a Program,
    pub store: &'a Store,
    /// Store version the production execution observed.
    pub at: u64,
    pub limits: ExecLimits,
}

/// Result of exploring one signature.
#[derive(Clone, Debug, PartialEq)]
pub struct Exploration {
    pub failure: Failure,
    pub spaces: Vec<SearchSpace>,
}

impl Exploration {
    pub fn valid(&self) -> impl Iterator<Item = &CandidatePatch> {
        self.spaces
            .iter()
            .flat_map(|s| s.patches.iter())
            .filter(|p| p.state == PatchState::Valid)
    }
}

#[derive(Debug, Default)]
pub struct PatchService {
    records: BTreeMap<Signature, FailureRecord>,
}

impl PatchService {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts one failing request. Returns the signature and its new count.
    pub fn record_failure(
        &mut self,
        req: &RequestEnvelope,
        resp: &ResponseEnvelope,
    ) -> (Signature, u64) {
        let sig = Signature::of_response(resp, &req.method, req.path_only());
        let rec = self
            .records
            .entry(sig.clone())
            .or_insert_with(|| FailureRecord {
                signature: sig.clone(),
                failure_count: 0,
                first_request: req.clone(),
                first_response: resp.clone(),
                explored: false,
                reproducible: None,
                spaces: BTreeMap::new(),
            });
        rec.failure_count += 1;
        (sig, rec.failure_count)
    }

    pub fn record(&self, sig: &Signature) -> Option<&FailureRecord> {
        self.records.get(sig)
    }

    pub fn records(&self) -> impl Iterator<Item = &FailureRecord> {
        self.records.values()
    }

    pub fn failure_counts(&self) -> BTreeMap<Signature, u64> {
        self.records
            .iter()
            .map(|(s, r)| (s.clone(), r.failure_count))
            .collect()
    }

    pub fn needs_exploration(&self, sig: &Signature) -> bool {
        self.records.get(sig).is_some_and(|r| !r.explored)
    }

    /// Claims `sig` for exploration: returns its first request and production response
    /// the first time, `None` afterwards. Claiming marks the record explored, so a
    /// signature is searched at most once even with concurrent callers.
    pub fn claim(&mut self, sig: &Signature) -> Option<(RequestEnvelope, ResponseEnvelope)> {
        let rec = self.records.get_mut(sig).filter(|r| !r.explored)?;
        rec.explored = true;
        Some((rec.first_request.clone(), rec.first_response.clone()))
    }

    /// Stores the outcome of a claimed search.
    pub fn complete(&mut self, sig: &Signature, outcome: &Result<Exploration, ReExecutionMismatch>) {
        let Some(rec) = self.records.get_mut(sig) else {
            return;
        };
        match outcome {
            Ok(x) => {
                rec.reproducible = Some(true);
                for space in &x.spaces {
                    let (valid, invalid): (Vec<_>, Vec<_>) = space
                        .patches
                        .iter()
                        .partition(|p| p.state == PatchState::Valid);
                    rec.spaces.insert(
                        space.model,
                        (
                            valid.into_iter().map(|p| p.id.clone()).collect(),
                            invalid.into_iter().map(|p| p.id.clone()).collect(),
                        ),
                    );
                }
            }
            Err(_) => rec.reproducible = Some(false),
        }
    }

    /// Claim, search and complete in one step.
    pub fn explore(
        &mut self,
        sig: &Signature,
        ctx: &SandboxContext<'_>,
    ) -> Option<Result<Exploration, ReExecutionMismatch>> {
        let (req, _) = self.claim(sig)?;
        let outcome = search(sig, &req, ctx);
        self.complete(sig, &outcome);
        Some(outcome)
    }

    /// Valid and invalid counts per model, as validated at exploration time.
    pub fn classification(
        &self,
        sig: &Signature,
    ) -> Result<BTreeMap<PatchModel, Classification>, UnknownSignature> {
        let rec = self
            .records
            .get(sig)
            .filter(|r| r.explored)
            .ok_or_else(|| UnknownSignature(sig.clone()))?;
        Ok([PatchModel::NullRecovery, PatchModel::ExceptionStopper]
            .into_iter()
            .map(|m| {
                let (v, i) = rec.spaces.get(&m).cloned().unwrap_or_default();
                (
                    m,
                    Classification {
                        valid: v.len(),
                        invalid: i.len(),
                    },
                )
            })
            .collect())
    }
}

/// Reproduces the failure of `req` and validates every candidate of both models.
pub fn search(
    sig: &Signature,
    req: &RequestEnvelope,
    ctx: &SandboxContext<'_>,
) -> Result<Exploration, ReExecutionMismatch> {
    let (result, _) = run_sandboxed(ctx.program, req, ctx.store, ctx.at, ctx.limits);
    let mismatch = |observed: String| ReExecutionMismatch {
        request_id: req.request_id.clone(),
        signature: sig.clone(),
        observed,
    };
    let failure = match &result {
        Ok(r) => match r.failure() {
            Some(f) if f.kind.name() == sig.kind && f.location.to_string() == sig.location => {
                f.clone()
            }
            Some(f) => return Err(mismatch(f.to_string())),
            None => return Err(mismatch("success".into())),
        },
        Err(e) => return Err(mismatch(e.to_string())),
    };
    let null_recovery = enumerate_null_recovery(ctx.program, &failure, sig).unwrap_or(SearchSpace {
        model: PatchModel::NullRecovery,
        signature: sig.clone(),
        patches: Vec::new(),
    });
    let stopper = enumerate_exception_stopper(ctx.program, &failure, sig);
    let mut spaces = vec![null_recovery, stopper];
    for space in &mut spaces {
        for p in &mut space.patches {
            let ok = validate(p, req, ctx);
            p.transition(if ok { PatchState::Valid } else { PatchState::Invalid })
                .expect("fresh candidates are validated once");
        }
    }
    Ok(Exploration { failure, spaces })
}

/// Valid iff the patched program answers `req` without an unhandled exception and with
/// a non-5xx status.
pub fn validate(patch: &CandidatePatch, req: &RequestEnvelope, ctx: &SandboxContext<'_>) -> bool {
    let Ok(patched) = patch.apply(ctx.program) else {
        return false;
    };
    let (result, resp) = run_sandboxed(&patched, req, ctx.store, ctx.at, ctx.limits);
    match result {
        Ok(r) => request_oracle_exception(&r).passed && request_oracle_status(&resp).passed,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::App;
    use std::sync::Arc;

    const SRC: &str = "
method main(req: record) {
    let c: record = store.get(\"cfg\");
    respond(200, \"n=\" + str(c.n + 1));
}
routes { GET / -> main }";

    fn setup() -> (App, RequestEnvelope, ResponseEnvelope) {
        let app = App::new(
            hpl::parse(SRC).unwrap(),
            Arc::new(Store::new()),
            ExecLimits::default(),
        );
        let req = RequestEnvelope::new("r1", "GET", "/");
        let resp = app.handle(&req);
        assert_eq!(resp.status, 500);
        (app, req, resp)
    }

    #[test]
    fn counts_dedup_and_partition() {
        let (app, req, resp) = setup();
        let mut svc = PatchService::new();
        let (sig, n) = svc.record_failure(&req, &resp);
        assert_eq!(n, 1);
        assert!(svc.classification(&sig).is_err());
        let program = app.program();
        let ctx = SandboxContext {
            program: &program,
            store: app.store(),
            at: 0,
            limits: ExecLimits::default(),
        };
        let x = svc.explore(&sig, &ctx).unwrap().unwrap();
        let total: usize = x.spaces.iter().map(|s| s.len()).sum();
        let c = svc.classification(&sig).unwrap();
        let counted: usize = c.values().map(|c| c.valid + c.invalid).sum();
        assert_eq!(total, counted);
        assert!(c[&PatchModel::NullRecovery].valid >= 1);
        assert_eq!(svc.record_failure(&req, &resp).1, 2);
        assert!(svc.explore(&sig, &ctx).is_none());
        assert_eq!(svc.classification(&sig).unwrap(), c);
    }

    #[test]
    fn unreproducible_failure_is_recorded() {
        let (app, req, resp) = setup();
        let mut svc = PatchService::new();
        let (sig, _) = svc.record_failure(&req, &resp);
        app.store().put("cfg", hpl::Value::record([("n", hpl::Value::Int(1))]));
        let program = app.program();
        let ctx = SandboxContext {
            program: &program,
            store: app.store(),
            at: app.store().version(),
            limits: ExecLimits::default(),
        };
        assert!(svc.explore(&sig, &ctx).unwrap().is_err());
        assert_eq!(svc.record(&sig).unwrap().reproducible, Some(false));
    }
}
