//! The bundled shop: structure, workload, scenarios and seeded faults.

use std::collections::BTreeMap;
use std::sync::Arc;

use hpl::{Body, ExceptionKind, ExecLimits, StmtKind};
use shadowfix_core::faults::{
    apply_fault, covered_checks, eligible_checks, verify_fault_triggers, workload_coverage,
};
use shadowfix_core::profile::{profile, Scenario};
use shadowfix_core::replay::{replay, replay_workload};
use shadowfix_core::patch::human_patch;
use shadowfix_core::signature::Signature;
use shadowfix_core::workload::{generate, Workload, MAX_REQUESTS, MIN_REQUESTS, SESSIONS};

/// Pinned from the first generator run.
const SEED_42_REQUESTS: usize = 121;
const SHOP_METHODS: usize = 24;
const SHOP_BLOCKS: usize = 84;

/// Blocks of a body counted from statement structure: the first statement opens a
/// block and so does every statement following a compound one. An empty body is one
/// block.
fn count_blocks(b: &Body) -> usize {
    let stmts: Vec<_> = b.blocks.iter().flat_map(|bl| &bl.stmts).collect();
    let mut n = if stmts.is_empty() { 1 } else { 0 };
    let mut opens = true;
    for s in stmts {
        if opens {
            n += 1;
        }
        opens = s.kind.is_compound();
        n += match &s.kind {
            StmtKind::If { then, els, .. } => count_blocks(then) + els.as_ref().map_or(0, count_blocks),
            StmtKind::While { body, .. } => count_blocks(body),
            StmtKind::Try { body, handler } => count_blocks(body) + count_blocks(handler),
            _ => 0,
        };
    }
    n
}

#[test]
fn shop_has_its_documented_method_and_block_counts() {
    let prof = profile("shop").unwrap();
    let p = prof.program();
    let by_text = prof.source.lines().filter(|l| l.starts_with("method ")).count();
    assert_eq!(p.methods.len(), by_text);
    assert_eq!(p.methods.len(), SHOP_METHODS);
    let walked: usize = p.methods.iter().map(|m| count_blocks(&m.body)).sum();
    assert_eq!(walked, SHOP_BLOCKS);
    assert_eq!(p.declared_blocks().len(), SHOP_BLOCKS);
}

#[test]
fn seed_42_workload_is_pinned_and_valid() {
    let w = generate("shop", 42).unwrap();
    assert_eq!(w.len(), SEED_42_REQUESTS);
    assert_eq!(w.sessions.len(), SESSIONS);
    for s in &w.sessions {
        assert!((MIN_REQUESTS..=MAX_REQUESTS).contains(&(s.requests.len() as u64)));
        assert!(s.requests.iter().all(|r| r.session_id.as_ref() == Some(&s.session_id)));
    }
    assert_eq!(generate("shop", 42).unwrap().to_text(), w.to_text());
    assert!(generate("bank", 42).is_err());

    let prof = profile("shop").unwrap();
    let ex = replay_workload(prof.program(), Arc::new(prof.store()), &w, ExecLimits::default());
    let mut statuses = BTreeMap::new();
    for x in &ex {
        *statuses.entry(x.response.status).or_insert(0) += 1;
        assert!(x.response.status < 500, "{} answered {}", x.request.request_id, x.response.status);
        assert!(!x.failed());
    }
    assert_eq!(statuses, BTreeMap::from([(200, 71), (201, 13), (400, 33), (404, 4)]));
}

#[test]
fn workload_sizes_stay_in_bounds_for_any_seed() {
    for seed in 0..200 {
        let n = generate("shop", seed).unwrap().len();
        assert!((75..=175).contains(&n), "seed {seed}: {n}");
    }
}

#[test]
fn shipping_scenario_multiplies_a_null_per_item_fee() {
    let s = Scenario::Shipping;
    let prof = s.profile_with_scenario(&profile("shop").unwrap());
    let p = prof.program();
    let ex = replay(p.clone(), Arc::new(prof.store()), &s.failing_requests(), ExecLimits::default());
    assert_eq!(ex[0].response.status, 200);
    let last = ex.last().unwrap();
    assert_eq!(last.response.status, 500);
    let f = last.result.as_ref().unwrap().failure().unwrap();
    assert_eq!(f.kind, ExceptionKind::NullDeref);
    assert_eq!(p.method(f.location.method).unwrap().name, "flat_price");
    let stmt = hpl::print_stmt_at(p.stmt_at(f.location).unwrap(), 0);
    assert!(stmt.contains("carrier.per_item * count"), "{stmt}");
    let names: Vec<_> = f.stack.iter().map(|l| p.method(l.method).unwrap().name.as_str()).collect();
    assert_eq!(names, ["shipping", "shipping_price", "flat_price"]);
}

#[test]
fn admin_scenario_reads_a_missing_error_property() {
    let s = Scenario::AdminEmail;
    let prof = s.profile_with_scenario(&profile("shop").unwrap());
    let p = prof.program();
    let ex = replay(p.clone(), Arc::new(prof.store()), &s.failing_requests(), ExecLimits::default());
    let f = ex.last().unwrap().result.as_ref().unwrap().failure().unwrap();
    assert_eq!(f.kind, ExceptionKind::NullDeref);
    assert_eq!(p.method(f.location.method).unwrap().name, "admin_form_page");
}

#[test]
fn fault_triggering_is_checked_against_the_original() {
    let prof = profile("shop").unwrap();
    let p = prof.program();
    let store = prof.store();
    let w = generate("shop", 42).unwrap();
    let covered = covered_checks(&p, &workload_coverage(&p, &store, &w, ExecLimits::default()));
    let triggering = covered
        .iter()
        .filter(|&&loc| {
            let (faulted, _) = apply_fault(&p, loc).unwrap();
            verify_fault_triggers(&p, &faulted, &store, &w, ExecLimits::default())
        })
        .count();
    assert_eq!((covered.len(), triggering), (19, 15));
    assert!(!verify_fault_triggers(&p, &p, &store, &w, ExecLimits::default()));

    // A check in a method the workload never calls.
    let dead = hpl::parse(&prof.source.replacen(
        "routes {",
        "method unused(x: any): int {\n    if (x == null) {\n        return 0;\n    }\n    return 1;\n}\n\nroutes {",
        1,
    ))
    .unwrap();
    let unused = dead.method_by_name("unused").unwrap().id;
    let loc = *eligible_checks(&dead).iter().find(|l| l.method == unused).unwrap();
    let (faulted, _) = apply_fault(&dead, loc).unwrap();
    assert!(!verify_fault_triggers(&dead, &faulted, &store, &w, ExecLimits::default()));

    // The shipping bug seen as a fault of its human fix: the workload triggers it once
    // its shipping requests ask for the carrier without a per-item fee.
    let s = Scenario::Shipping;
    let sp = s.profile_with_scenario(&prof);
    let fixed = human_patch(&p, "flat_price", s.human_fix().1, Signature::new("h", "-", "-"))
        .unwrap()
        .apply(&p)
        .unwrap();
    assert!(verify_fault_triggers(&fixed, &p, &sp.store(), &with_express(&w), ExecLimits::default()));
}

/// The workload with every shipping request switched to the express carrier.
fn with_express(w: &Workload) -> Workload {
    let mut w = w.clone();
    for s in &mut w.sessions {
        for r in &mut s.requests {
            if r.path.starts_with("/shipping") {
                r.path = "/shipping?carrier=express".into();
            }
        }
    }
    w
}
