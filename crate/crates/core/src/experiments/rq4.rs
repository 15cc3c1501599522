//! End-to-end bug scenarios: the failing request arrives in production, patches are
//! generated and regressed against the workload, and the surviving ones are ranked and
//! compared with the developer's fix.

use std::sync::Arc;

use hpl::{ExecLimits, Program, RequestEnvelope};
use serde::{Deserialize, Serialize};

use super::Table;
use crate::app::{App, SESSION_HEADER};
use crate::harness::{Harness, HarnessConfig};
use crate::oracles::ScrubRules;
use crate::patch::{human_patch, PatchModel, PatchState};
use crate::profile::{profile, Scenario};
use crate::replay::{drive, replay};
use crate::store::Store;
use crate::workload::{generate, CookieJar};

#[derive(Clone, Debug)]
pub struct Rq4Config {
    pub scenario: Scenario,
    pub workload_seed: u64,
    pub rules: ScrubRules,
    pub limits: ExecLimits,
}

impl Rq4Config {
    pub fn new(scenario: Scenario) -> Self {
        Rq4Config {
            scenario,
            workload_seed: 42,
            rules: ScrubRules::default(),
            limits: ExecLimits::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq4Row {
    pub rank: usize,
    pub patch_id: String,
    pub model: PatchModel,
    pub strategy: String,
    pub target: String,
    pub payload: String,
    pub state: PatchState,
    pub failure_count: u64,
    pub regression_success_count: u64,
    /// Status of the last failing request on the patched program.
    pub failing_status: u16,
    /// Requests (failing ones, then the workload) answered differently from the human
    /// fix, after scrubbing. Zero means output-equal.
    pub mismatches_vs_human: usize,
    pub diff: String,
}

impl Rq4Row {
    pub fn output_equal(&self) -> bool {
        self.mismatches_vs_human == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Approval {
    pub patch_id: String,
    pub version: u64,
    /// Status of the failing request sent again after the hot swap.
    pub failing_status: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq4Report {
    pub scenario: Scenario,
    pub workload_seed: u64,
    pub signature: String,
    pub failure_count: u64,
    pub workload_requests: usize,
    pub generated_valid: usize,
    pub generated_invalid: usize,
    pub regressive: Vec<String>,
    pub ranked: Vec<Rq4Row>,
    pub approval: Option<Approval>,
}

impl Rq4Report {
    /// Generated patches that survived the whole workload and match the human fix.
    pub fn output_equal_survivors(&self) -> impl Iterator<Item = &Rq4Row> {
        self.ranked.iter().filter(|r| {
            r.model != PatchModel::Human && r.state == PatchState::Surviving && r.output_equal()
        })
    }
}

/// Status and scrubbed body of every answer, replayed on a fresh store.
fn outputs(
    program: &Program,
    entries: &Store,
    requests: &[RequestEnvelope],
    rules: &ScrubRules,
    limits: ExecLimits,
) -> Vec<(u16, String)> {
    let store = Arc::new(entries.fork_at(entries.version()));
    replay(program.clone(), store, requests, limits)
        .into_iter()
        .map(|x| (x.response.status, rules.scrub(&x.response.body_text())))
        .collect()
}

pub fn run(config: &Rq4Config) -> Rq4Report {
    let scenario = config.scenario;
    let prof = scenario.profile_with_scenario(&profile("shop").expect("bundled profile"));
    let base = prof.store();
    let workload = generate("shop", config.workload_seed).expect("bundled profile");
    let app = Arc::new(App::new(
        prof.program(),
        Arc::new(base.fork_at(base.version())),
        config.limits,
    ));
    let harness = Harness::new(
        app.clone(),
        HarnessConfig {
            rules: config.rules.clone(),
            limits: config.limits,
            ..HarnessConfig::default()
        },
    );
    let mut jar = CookieJar::new(SESSION_HEADER);
    let failing = scenario.failing_requests();
    drive(&harness, &mut jar, &failing);
    let failure = harness
        .failures()
        .into_iter()
        .next()
        .expect("the scenario fails in production");
    let (method, source) = scenario.human_fix();
    harness
        .validate_human_patch(method, source, Some(failure.signature.clone()))
        .expect("human fix applies");
    drive(&harness, &mut jar, workload.requests());

    let original = prof.program();
    let human = human_patch(&original, method, source, failure.signature.clone())
        .and_then(|p| p.apply(&original))
        .expect("human fix applies");
    let mut all_requests = failing.clone();
    all_requests.extend(workload.requests().cloned());
    let expected = outputs(&human, &base, &all_requests, &config.rules, config.limits);

    let ranked: Vec<Rq4Row> = harness
        .ranked_report()
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let program = harness.patched_program(&e.patch.id).expect("ranked patches are cached");
            let got = outputs(&program, &base, &all_requests, &config.rules, config.limits);
            let mismatches = got.iter().zip(&expected).filter(|(a, b)| a != b).count();
            Rq4Row {
                rank: i + 1,
                patch_id: e.patch.id.clone(),
                model: e.patch.model,
                strategy: e.patch.strategy.clone(),
                target: e.patch.target.clone(),
                payload: e.patch.payload.clone(),
                state: e.patch.state,
                failure_count: e.failure_count,
                regression_success_count: e.regression_success_count,
                failing_status: got[failing.len() - 1].0,
                mismatches_vs_human: mismatches,
                diff: e.diff,
            }
        })
        .collect();
    let patches = harness.patches();
    let generated = |s: PatchState| {
        patches
            .iter()
            .filter(|p| p.model != PatchModel::Human && p.state == s)
            .count()
    };
    let generated_invalid = generated(PatchState::Invalid);
    let regressive: Vec<String> = patches
        .iter()
        .filter(|p| p.state == PatchState::Regressive)
        .map(|p| p.id.clone())
        .collect();
    let generated_valid = patches
        .iter()
        .filter(|p| p.model != PatchModel::Human && p.state != PatchState::Invalid)
        .count();

    let mut report = Rq4Report {
        scenario,
        workload_seed: config.workload_seed,
        signature: failure.signature.to_string(),
        failure_count: failure.count,
        workload_requests: workload.len(),
        generated_valid,
        generated_invalid,
        regressive,
        ranked,
        approval: None,
    };
    let pick = report
        .output_equal_survivors()
        .next()
        .or_else(|| {
            report
                .ranked
                .iter()
                .find(|r| r.model != PatchModel::Human && r.state == PatchState::Surviving)
        })
        .map(|r| r.patch_id.clone());
    if let Some(id) = pick {
        let version = harness.approve(&id).expect("surviving patches can be approved");
        let last = drive(&harness, &mut jar, failing.last());
        report.approval = Some(Approval {
            patch_id: id,
            version,
            failing_status: last[0].1.status,
        });
    }
    report
}

impl Rq4Report {
    pub fn to_text(&self) -> String {
        let mut t = Table::new(&[
            "rank", "patch", "model", "strategy", "payload", "state", "failures", "successes",
            "failing status", "same as human fix",
        ]);
        for r in &self.ranked {
            t.row(vec![
                r.rank.to_string(),
                r.patch_id.clone(),
                r.model.name().to_string(),
                r.strategy.clone(),
                r.payload.clone(),
                r.state.name().to_string(),
                r.failure_count.to_string(),
                r.regression_success_count.to_string(),
                r.failing_status.to_string(),
                if r.output_equal() {
                    "yes".to_string()
                } else {
                    format!("no ({} differ)", r.mismatches_vs_human)
                },
            ]);
        }
        let mut out = format!(
            "scenario: {}\nfailure: {} (count {})\nworkload: seed {}, {} requests\ngenerated: {} valid, {} invalid; {} regressive\n\n",
            self.scenario.name(),
            self.signature,
            self.failure_count,
            self.workload_seed,
            self.workload_requests,
            self.generated_valid,
            self.generated_invalid,
            self.regressive.len(),
        );
        out.push_str(&t.render());
        if let Some(a) = &self.approval {
            out.push_str(&format!(
                "\napproved {} as program version {}; failing request now answers {}\n",
                a.patch_id, a.version, a.failing_status
            ));
        }
        for r in &self.ranked {
            out.push_str(&format!("\n#{} {} ({} {})\n{}", r.rank, r.patch_id, r.strategy, r.payload, r.diff));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
