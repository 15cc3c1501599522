//! Oracle effectiveness: run a suite of patches against the successful requests of a
//! workload and measure, per execution comparison oracle, how often each patched
//! execution diverges from production.
//!
//! The suite mixes generated patches with crafted ones whose ground truth is known:
//! fixes that keep every successful request identical, and edits that break some.

use std::collections::BTreeMap;
use std::sync::Arc;

use hpl::{ExecLimits, Location, Program, RequestEnvelope, Value};
use serde::{Deserialize, Serialize};

use super::rq1::{select_faults, Rq1Config};
use super::Table;
use crate::app::{header_u64, App, SESSION_HEADER, STORE_VERSION_HEADER};
use crate::faults::apply_fault;
use crate::harness::{is_failing, Harness, HarnessConfig};
use crate::oracles::{DivergenceReport, Oracle, ScrubRules};
use crate::patch::{human_patch, CandidatePatch, Edit, PatchModel, PatchState, S2};
use crate::profile::{profile, Scenario};
use crate::regression::{compare_patched, Reference};
use crate::replay::{drive, replay};
use crate::signature::Signature;
use crate::store::Store;
use crate::workload::{generate, CookieJar, Workload};

/// Ground truth of a suite entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    KnownCorrect,
    KnownRegressive,
    Generated,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::KnownCorrect => "known-correct",
            Label::KnownRegressive => "known-regressive",
            Label::Generated => "generated",
        }
    }
}

/// A program under test with its store and the requests that make it fail.
#[derive(Clone, Debug)]
pub struct Subject {
    pub name: String,
    pub program: Arc<Program>,
    pub entries: Vec<(String, Value)>,
    pub failing: Vec<RequestEnvelope>,
}

impl Subject {
    pub fn scenario(s: Scenario) -> Self {
        let prof = s.profile_with_scenario(&profile("shop").expect("bundled profile"));
        Subject {
            name: s.name().to_string(),
            program: Arc::new(prof.program()),
            entries: prof.entries,
            failing: s.failing_requests(),
        }
    }

    /// The shop with the check at `loc` removed; failing requests are the workload
    /// prefix up to its first failure.
    pub fn fault(loc: Location, workload: &Workload, limits: ExecLimits) -> Self {
        let prof = profile("shop").expect("bundled profile");
        let (program, fault) = apply_fault(&prof.program(), loc).expect("eligible check");
        let store = Arc::new(prof.store());
        let exchanges = replay(program.clone(), store, workload.requests(), limits);
        let n = exchanges
            .iter()
            .position(|x| is_failing(&x.response))
            .map_or(0, |i| i + 1);
        Subject {
            name: fault.id,
            program: Arc::new(program),
            entries: prof.entries,
            failing: workload.requests().take(n).cloned().collect(),
        }
    }

    pub fn store(&self) -> Store {
        Store::from_entries(self.entries.clone())
    }

    /// Valid patches the full loop generates when the failing requests arrive.
    pub fn generated(&self, limits: ExecLimits) -> Vec<CandidatePatch> {
        let app = Arc::new(App::new((*self.program).clone(), Arc::new(self.store()), limits));
        let harness = Harness::new(
            app,
            HarnessConfig {
                limits,
                ..HarnessConfig::default()
            },
        );
        drive(&harness, &mut CookieJar::new(SESSION_HEADER), &self.failing);
        harness
            .patches()
            .into_iter()
            .filter(|p| p.state == PatchState::Valid)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub subject: usize,
    pub label: Label,
    pub patch: CandidatePatch,
}

fn crafted_sig() -> Signature {
    Signature::new("crafted", "-", "-")
}

/// Replaces the first statement of `method` whose printed form starts with `prefix`.
pub fn crafted_skip(program: &Program, method: &str, prefix: &str) -> CandidatePatch {
    let m = program.method_by_name(method).expect("method exists");
    let mut at = None;
    m.body.visit_stmts(&mut |b, i, s| {
        if at.is_none() && hpl::print_stmt_at(s, 0).starts_with(prefix) {
            at = Some(Location {
                method: m.id,
                block: b.id,
                index: i,
            });
        }
    });
    let at = at.expect("statement exists");
    CandidatePatch::new(
        PatchModel::Human,
        "skip",
        at.to_string(),
        prefix.to_string(),
        Edit::Skip { at },
        program.version,
        crafted_sig(),
    )
}

fn crafted_replace(program: &Program, method: &str, source: &str) -> CandidatePatch {
    human_patch(program, method, source, crafted_sig()).expect("crafted replacement applies")
}

/// Hides the order total on the shipping page.
pub const SKIP_TOTAL_PREFIX: &str = "lines = lines + \"\\nshipping: \"";

/// Every product description request now fails.
pub const DESCRIBE_THROWS: &str = r#"method describe(product: record): str {
    throw "description service unavailable";
}
"#;

/// Promotions are applied twice as strongly.
pub const UNIT_PRICE_DOUBLE_PROMO: &str = r#"method unit_price(product: record): int {
    let price: int = product.price;
    let promo: record = product.promo;
    if (promo == null) {
        return price;
    } else {
        return price - price * promo.percent / 50;
    }
}
"#;

/// Subjects: both bug scenarios, then one seeded fault chosen by `seed`.
pub fn subjects(seed: u64, workload: &Workload, limits: ExecLimits) -> Vec<Subject> {
    let mut out = vec![
        Subject::scenario(Scenario::Shipping),
        Subject::scenario(Scenario::AdminEmail),
    ];
    let (faults, _, _) = select_faults(&Rq1Config {
        faults: 1,
        seed,
        workload_seed: workload.seed,
        limits,
        ..Rq1Config::default()
    });
    out.extend(faults.into_iter().map(|(_, loc)| Subject::fault(loc, workload, limits)));
    out
}

/// The crafted entries on the scenario subjects plus every generated valid patch.
pub fn suite(subjects: &[Subject], limits: ExecLimits) -> Vec<SuiteEntry> {
    let mut out = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        let generated = s.generated(limits);
        if s.name == Scenario::Shipping.name() {
            let (m, src) = Scenario::Shipping.human_fix();
            out.push(entry(i, Label::KnownCorrect, crafted_replace(&s.program, m, src)));
            let zero = generated
                .iter()
                .find(|p| p.strategy == S2 && p.payload.ends_with(":= 0"))
                .expect("the zero default is generated for the shipping failure");
            out.push(entry(i, Label::KnownCorrect, zero.clone()));
            out.push(entry(
                i,
                Label::KnownRegressive,
                crafted_skip(&s.program, "shipping", SKIP_TOTAL_PREFIX),
            ));
            out.push(entry(
                i,
                Label::KnownRegressive,
                crafted_replace(&s.program, "describe", DESCRIBE_THROWS),
            ));
            out.push(entry(
                i,
                Label::KnownRegressive,
                crafted_replace(&s.program, "unit_price", UNIT_PRICE_DOUBLE_PROMO),
            ));
        }
        if s.name == Scenario::AdminEmail.name() {
            let (m, src) = Scenario::AdminEmail.human_fix();
            out.push(entry(i, Label::KnownCorrect, crafted_replace(&s.program, m, src)));
        }
        for p in generated {
            if !out.iter().any(|e| e.subject == i && e.patch.id == p.id) {
                out.push(entry(i, Label::Generated, p));
            }
        }
    }
    out
}

fn entry(subject: usize, label: Label, patch: CandidatePatch) -> SuiteEntry {
    SuiteEntry {
        subject,
        label,
        patch,
    }
}

/// Per-request reports of one patch, one list per oracle in the order requested.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub reports: BTreeMap<Oracle, Vec<DivergenceReport>>,
}

/// Production replay of the workload on a fresh store: the reference executions.
pub struct Baseline {
    pub store: Arc<Store>,
    pub exchanges: Vec<crate::replay::Exchange>,
}

impl Baseline {
    pub fn new(subject: &Subject, workload: &Workload, limits: ExecLimits) -> Self {
        let store = Arc::new(subject.store());
        let exchanges = replay((*subject.program).clone(), store.clone(), workload.requests(), limits);
        Baseline { store, exchanges }
    }

    /// The successful exchanges: the regression traffic.
    pub fn references(&self) -> Vec<Reference<'_>> {
        self.exchanges
            .iter()
            .filter(|x| !is_failing(&x.response))
            .map(|x| Reference {
                request: &x.request,
                output: &x.response,
                at: header_u64(&x.response, STORE_VERSION_HEADER).expect("app stamps store version"),
                coverage: x.result.as_ref().ok().map(|r| r.coverage.clone()),
            })
            .collect()
    }
}

/// Runs `patch` on every reference request under every oracle. Nothing is removed
/// on divergence, so each oracle sees the same requests.
pub fn evaluate(
    program: &Program,
    patch: &CandidatePatch,
    baseline: &Baseline,
    oracles: &[Oracle],
    rules: &ScrubRules,
    limits: ExecLimits,
) -> Evaluation {
    let patched = patch.apply(program).expect("suite patches apply to their subject");
    let mut reports: BTreeMap<Oracle, Vec<DivergenceReport>> =
        oracles.iter().map(|o| (*o, Vec::new())).collect();
    for reference in baseline.references() {
        let (rs, _) = compare_patched(&patched, &reference, &baseline.store, limits, rules, oracles);
        for r in rs {
            reports.get_mut(&r.oracle).expect("requested oracle").push(r.with_patch(&patch.id));
        }
    }
    Evaluation { reports }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub oracle: Oracle,
    pub divergences: usize,
    /// Mean magnitude over the compared requests.
    pub magnitude: f64,
    pub detected: bool,
}

impl Cell {
    pub fn of(oracle: Oracle, reports: &[DivergenceReport]) -> Self {
        let divergences = reports.iter().filter(|r| r.diverged).count();
        let sum: f64 = reports.iter().map(|r| r.magnitude).sum();
        let magnitude = if reports.is_empty() {
            0.0
        } else {
            sum / reports.len() as f64
        };
        Cell {
            oracle,
            divergences,
            magnitude,
            detected: divergences > 0,
        }
    }

    fn render(&self) -> String {
        let mark = if self.detected { "✓" } else { "✗" };
        format!("{mark} {:.1}%", self.magnitude * 100.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq2Row {
    pub subject: String,
    pub patch_id: String,
    pub label: Label,
    pub model: PatchModel,
    pub strategy: String,
    pub target: String,
    pub payload: String,
    pub requests: usize,
    pub cells: Vec<Cell>,
}

impl Rq2Row {
    pub fn cell(&self, oracle: Oracle) -> Option<&Cell> {
        self.cells.iter().find(|c| c.oracle == oracle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub seed: u64,
    pub workload_seed: u64,
    pub oracles: Vec<Oracle>,
    pub subjects: Vec<String>,
    pub rows: Vec<Rq2Row>,
    pub base_digest_before: String,
    pub base_digest_after: String,
}

#[derive(Clone, Debug)]
pub struct Rq2Config {
    pub seed: u64,
    pub workload_seed: u64,
    pub oracles: Vec<Oracle>,
    pub rules: ScrubRules,
    pub limits: ExecLimits,
}

impl Default for Rq2Config {
    fn default() -> Self {
        Rq2Config {
            seed: 1,
            workload_seed: 42,
            oracles: Oracle::ALL.to_vec(),
            rules: ScrubRules::default(),
            limits: ExecLimits::default(),
        }
    }
}

pub fn run(config: &Rq2Config) -> Rq2Report {
    let workload = generate("shop", config.workload_seed).expect("bundled profile");
    let subjects = subjects(config.seed, &workload, config.limits);
    let suite = suite(&subjects, config.limits);
    let baselines: Vec<Baseline> = subjects
        .iter()
        .map(|s| Baseline::new(s, &workload, config.limits))
        .collect();
    // Patched executions read the production stores; they must leave them untouched.
    let base_digest_before = digest_all(&baselines);
    let rows = suite
        .iter()
        .map(|e| {
            let s = &subjects[e.subject];
            let ev = evaluate(
                &s.program,
                &e.patch,
                &baselines[e.subject],
                &config.oracles,
                &config.rules,
                config.limits,
            );
            Rq2Row {
                subject: s.name.clone(),
                patch_id: e.patch.id.clone(),
                label: e.label,
                model: e.patch.model,
                strategy: e.patch.strategy.clone(),
                target: e.patch.target.clone(),
                payload: e.patch.payload.clone(),
                requests: baselines[e.subject].references().len(),
                cells: config
                    .oracles
                    .iter()
                    .map(|o| Cell::of(*o, &ev.reports[o]))
                    .collect(),
            }
        })
        .collect();
    Rq2Report {
        seed: config.seed,
        workload_seed: config.workload_seed,
        oracles: config.oracles.clone(),
        subjects: subjects.iter().map(|s| s.name.clone()).collect(),
        rows,
        base_digest_before,
        base_digest_after: digest_all(&baselines),
    }
}

fn digest_all(baselines: &[Baseline]) -> String {
    baselines.iter().map(|b| b.store.digest()).collect::<Vec<_>>().join(",")
}

impl Rq2Report {
    pub fn to_text(&self) -> String {
        let mut header = vec!["subject", "patch", "label", "strategy", "payload", "requests"];
        header.extend(self.oracles.iter().map(|o| o.name()));
        let mut t = Table::new(&header);
        for r in &self.rows {
            let mut cells = vec![
                r.subject.clone(),
                r.patch_id.clone(),
                r.label.name().to_string(),
                r.strategy.clone(),
                r.payload.clone(),
                r.requests.to_string(),
            ];
            cells.extend(r.cells.iter().map(Cell::render));
            t.row(cells);
        }
        let mut out = format!(
            "patches: {} on {} subjects (seed {}, workload seed {})\n✓ = divergence detected; percentages are mean magnitudes over the successful requests\n\n",
            self.rows.len(),
            self.subjects.len(),
            self.seed,
            self.workload_seed,
        );
        out.push_str(&t.render());
        out.push('\n');
        for o in &self.oracles {
            let flagged = self
                .rows
                .iter()
                .filter(|r| r.cell(*o).is_some_and(|c| c.detected))
                .count();
            out.push_str(&format!("{o}: {flagged} flagged\n"));
        }
        out.push_str(&format!(
            "base store digests: {} -> {}\n",
            self.base_digest_before, self.base_digest_after
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
