//! Invariants of the store, oracles, fault seeder and patch models, as property runs.

use std::collections::BTreeSet;
use std::sync::Arc;

use hpl::{
    BinOp, Body, ExecLimits, ExprKind, Location, Program, ResponseEnvelope, StmtKind, Value,
};
use proptest::prelude::*;
use shadowfix_core::app::{run_sandboxed, App, SESSION_HEADER};
use shadowfix_core::faults::{apply_fault, covered_checks, eligible_checks, seed_null_fault, workload_coverage};
use shadowfix_core::oracles::{compare, Observed, Oracle, ScrubRules};
use shadowfix_core::patch::{enumerate_exception_stopper, enumerate_null_recovery};
use shadowfix_core::profile::{profile, Scenario};
use shadowfix_core::replay::replay_workload;
use shadowfix_core::signature::Signature;
use shadowfix_core::store::Store;
use shadowfix_core::workload::{generate, CookieJar};

fn shop() -> Program {
    profile("shop").unwrap().program()
}

/// Response bodies shaped like the shop's, with the transient fields scrubbing targets.
fn body() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-z ]{0,12}",
        (0u32..10000, 1u32..13, 1u32..29).prop_map(|(y, m, d)| format!("date={y:04}-{m:02}-{d:02}")),
        (1u32..13, 1u32..29, 0u32..24).prop_map(|(m, d, h)| format!("date=2024-{m:02}-{d:02}T{h:02}:00:00.000Z")),
        "[0-9a-f]{16}".prop_map(|h| format!("sid-{h}")),
        "[0-9a-f]{16}".prop_map(|h| format!("ord-{h}")),
        Just("date=<T>".to_string()),
        Just("<S>".to_string()),
        Just("ord-<O>".to_string()),
        "[0-9a-f]{8}".prop_map(|h| format!("sid-{h}")),
    ];
    prop::collection::vec(piece, 0..8).prop_map(|p| p.join("\n"))
}

fn response() -> impl Strategy<Value = ResponseEnvelope> {
    (prop_oneof![Just(200u16), Just(201), Just(400), Just(404), Just(500)], body())
        .prop_map(|(s, b)| ResponseEnvelope::new(s, b))
}

fn trace() -> impl Strategy<Value = hpl::CoverageTrace> {
    (
        prop::collection::btree_set(0u32..6, 0..5),
        prop::collection::btree_set(0u32..12, 0..8),
    )
        .prop_map(|(m, b)| hpl::CoverageTrace {
            methods: m.into_iter().map(hpl::MethodId).collect(),
            blocks: b.into_iter().map(hpl::BlockId).collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scrubbing_is_idempotent(b in body()) {
        let rules = ScrubRules::default();
        let once = rules.scrub(&b);
        prop_assert_eq!(rules.scrub(&once), once);
    }

    #[test]
    fn comparison_oracles_are_reflexive(r in response(), t in trace()) {
        let rules = ScrubRules::default();
        let o = Observed { response: &r, coverage: Some(&t) };
        for oracle in Oracle::ALL {
            let rep = compare(oracle, "q", &o, &o, &rules);
            prop_assert!(!rep.diverged);
            prop_assert_eq!(rep.magnitude, 0.0);
        }
    }

    #[test]
    fn comparison_oracles_are_symmetric(a in response(), b in response(), ta in trace(), tb in trace()) {
        let rules = ScrubRules::default();
        let oa = Observed { response: &a, coverage: Some(&ta) };
        let ob = Observed { response: &b, coverage: Some(&tb) };
        for oracle in Oracle::ALL {
            let ab = compare(oracle, "q", &oa, &ob, &rules);
            let ba = compare(oracle, "q", &ob, &oa, &rules);
            prop_assert_eq!(ab.diverged, ba.diverged);
            prop_assert_eq!(ab.magnitude, ba.magnitude);
            prop_assert_eq!(ab.diverged, ab.magnitude > 0.0);
            prop_assert!((0.0..=1.0).contains(&ab.magnitude));
        }
    }

    #[test]
    fn seeded_faults_revert_byte_identically(seed in any::<u64>()) {
        let p = shop();
        let (faulted, fault) = seed_null_fault(&p, &eligible_checks(&p), seed).unwrap();
        prop_assert_ne!(&faulted, &p);
        faulted.validate().unwrap();
        let back = fault.revert(&faulted);
        prop_assert_eq!(hpl::print_program(&back), hpl::print_program(&p));
        prop_assert_eq!(back, p);
    }

    #[test]
    fn sandboxed_runs_never_touch_the_base(seed in any::<u64>(), pick in 0usize..121) {
        let prof = profile("shop").unwrap();
        let store = prof.store();
        let before = store.digest();
        let w = generate("shop", seed % 16).unwrap();
        let p = shop();
        let (faulted, _) = seed_null_fault(&p, &eligible_checks(&p), seed).unwrap();
        for (i, r) in w.requests().enumerate() {
            if i % 121 == pick % 7 || i < 3 {
                let r = r.clone().with_session(None);
                run_sandboxed(&p, &r, &store, store.version(), ExecLimits::default());
                run_sandboxed(&faulted, &r, &store, store.version(), ExecLimits::default());
            }
        }
        prop_assert_eq!(store.digest(), before);
    }
}

/// Independent AST walk: every `if` whose condition compares something against the
/// null literal with `==` (null branch = then) or `!=` (null branch = else), where the
/// null branch has at least one statement.
fn checks_by_walk(p: &Program) -> BTreeSet<Location> {
    fn body_has_stmts(b: &Body) -> bool {
        b.blocks.iter().any(|bl| !bl.stmts.is_empty())
    }
    let mut out = BTreeSet::new();
    for m in &p.methods {
        m.body.visit_stmts(&mut |b, i, s| {
            let StmtKind::If { cond, then, els } = &s.kind else { return };
            let ExprKind::Binary(op, l, r) = &cond.kind else { return };
            let nulls = [l, r]
                .iter()
                .filter(|e| matches!(e.kind, ExprKind::Lit(Value::Null)))
                .count();
            if nulls != 1 {
                return;
            }
            let handler = match op {
                BinOp::Eq => Some(then),
                BinOp::Ne => els.as_ref(),
                _ => None,
            };
            if handler.is_some_and(body_has_stmts) {
                out.insert(Location { method: m.id, block: b.id, index: i });
            }
        });
    }
    out
}

#[test]
fn sampler_only_returns_eligible_checks_over_1000_seeds() {
    let p = shop();
    let expected = checks_by_walk(&p);
    assert_eq!(eligible_checks(&p).into_iter().collect::<BTreeSet<_>>(), expected);
    let prof = profile("shop").unwrap();
    let w = generate("shop", 42).unwrap();
    let covered = covered_checks(&p, &workload_coverage(&p, &prof.store(), &w, ExecLimits::default()));
    assert!(!covered.is_empty());
    let mut hit = BTreeSet::new();
    for seed in 0..1000 {
        let (_, f) = seed_null_fault(&p, &covered, seed).unwrap();
        assert!(expected.contains(&f.location));
        assert!(covered.contains(&f.location));
        hit.insert(f.location);
    }
    assert_eq!(hit.len(), covered.len(), "1000 draws reach every covered check");
}

#[test]
fn single_check_is_chosen_regardless_of_seed() {
    let p = hpl::parse(
        "method m(a: any) { if (a == null) { a = 1; } } routes { GET / -> m }",
    )
    .unwrap();
    let checks = eligible_checks(&p);
    for seed in [0, 1, 7, u64::MAX] {
        assert_eq!(seed_null_fault(&p, &checks, seed).unwrap().1.location, checks[0]);
    }
    assert!(seed_null_fault(&p, &[], 3).is_err());
}

/// Failures on the shop: both scenarios plus every covered fault that triggers.
fn shop_failures() -> Vec<(Program, hpl::Failure, Signature)> {
    let mut out = Vec::new();
    for s in [Scenario::Shipping, Scenario::AdminEmail] {
        let prof = s.profile_with_scenario(&profile("shop").unwrap());
        let ex = shadowfix_core::replay::replay(
            prof.program(),
            Arc::new(prof.store()),
            &s.failing_requests(),
            ExecLimits::default(),
        );
        let f = ex.last().unwrap().result.as_ref().unwrap().failure().unwrap().clone();
        out.push((prof.program(), f, Signature::new("t", "-", "-")));
    }
    let p = shop();
    let prof = profile("shop").unwrap();
    let w = generate("shop", 42).unwrap();
    for loc in covered_checks(&p, &workload_coverage(&p, &prof.store(), &w, ExecLimits::default())) {
        let (faulted, _) = apply_fault(&p, loc).unwrap();
        let ex = replay_workload(faulted.clone(), Arc::new(prof.store()), &w, ExecLimits::default());
        if let Some(f) = ex.iter().find_map(|x| x.result.as_ref().ok()?.failure().cloned()) {
            out.push((faulted, f, Signature::new("t", "-", "-")));
        }
    }
    out
}

#[test]
fn every_patch_of_every_space_applies_to_a_valid_program() {
    for (p, f, sig) in shop_failures() {
        let mut spaces = vec![enumerate_exception_stopper(&p, &f, &sig)];
        spaces.extend(enumerate_null_recovery(&p, &f, &sig).ok());
        for space in spaces {
            let mut seen = BTreeSet::new();
            let mut programs = BTreeSet::new();
            for patch in &space.patches {
                assert!(seen.insert(patch.id.clone()), "duplicate id {}", patch.id);
                let out = patch.apply(&p).unwrap();
                out.validate().unwrap();
                assert_eq!(out.version, p.version + 1);
                let target = patch.edit.method();
                for (a, b) in p.methods.iter().zip(&out.methods) {
                    if a.id != target {
                        assert_eq!(a, b, "patch {} touched {}", patch.id, a.name);
                    }
                }
                assert_eq!(p.routes, out.routes);
                let text = hpl::print_program(&out);
                // A skipped statement prints as a comment marker, which parsing drops.
                let unmarked: String = text
                    .lines()
                    .filter(|l| l.trim() != "// skipped")
                    .map(|l| format!("{l}\n"))
                    .collect();
                assert_eq!(hpl::print_program(&hpl::parse(&text).unwrap()), unmarked);
                programs.insert(text);
            }
            assert_eq!(programs.len(), space.patches.len(), "apply is injective per space");
        }
    }
}

#[test]
fn enumeration_is_deterministic() {
    for (p, f, sig) in shop_failures() {
        let a = enumerate_exception_stopper(&p, &f, &sig);
        let b = enumerate_exception_stopper(&p.clone(), &f.clone(), &sig);
        assert_eq!(a, b);
        assert_eq!(
            enumerate_null_recovery(&p, &f, &sig).ok(),
            enumerate_null_recovery(&p, &f, &sig).ok()
        );
    }
}

#[test]
fn sandbox_digest_is_invariant_across_all_candidate_executions() {
    for s in [Scenario::Shipping, Scenario::AdminEmail] {
        let prof = s.profile_with_scenario(&profile("shop").unwrap());
        let store = Arc::new(prof.store());
        let app = App::new(prof.program(), store.clone(), ExecLimits::default());
        let mut jar = CookieJar::new(SESSION_HEADER);
        let mut last = None;
        for r in &s.failing_requests() {
            let req = jar.prepare(r);
            let (result, response) = app.handle_with_result(&req);
            jar.observe(r, &response);
            last = Some((result, req));
        }
        let before = store.digest();
        let at = store.version();
        let (result, req) = last.unwrap();
        let f = result.unwrap().failure().unwrap().clone();
        let sig = Signature::new("t", "-", "-");
        let p = app.program();
        let mut patches = enumerate_exception_stopper(&p, &f, &sig).patches;
        patches.extend(enumerate_null_recovery(&p, &f, &sig).unwrap().patches);
        for patch in patches {
            let patched = patch.apply(&p).unwrap();
            run_sandboxed(&patched, &req, &store, at, ExecLimits::default());
        }
        assert_eq!(store.digest(), before);
    }
}

#[test]
fn empty_store_digest_is_stable() {
    assert_eq!(Store::new().digest(), Store::new().digest());
}
