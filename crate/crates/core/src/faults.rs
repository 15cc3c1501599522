//! Null-fault seeding: remove the null-handling branch of a not-null check.
//!
//! A check is `if (E == null) { A } [else { B }]` or `if (E != null) { B } else { A }`
//! with a non-empty `A`. Seeding rewrites the check to `B`, spliced in place.

use std::collections::BTreeSet;
use std::sync::Arc;

use hpl::{
    BinOp, Block, BlockId, Body, ExecLimits, ExprKind, Location, Method, Program, Stmt, StmtKind,
    Value,
};
use serde::{Deserialize, Serialize};

use crate::replay::replay_workload;
use crate::rng::Rng;
use crate::store::Store;
use crate::workload::Workload;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("program has no eligible not-null check")]
pub struct NoEligibleCheck;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededFault {
    pub id: String,
    pub location: Location,
    pub method: String,
    /// The removed check, verbatim.
    pub removed: Stmt,
    original_method: Method,
    original_counters: (u32, u32),
}

impl SeededFault {
    /// Restores the program the fault was seeded into.
    pub fn revert(&self, faulted: &Program) -> Program {
        let mut p = faulted.clone();
        p.restore_method(self.original_method.clone(), self.original_counters);
        p
    }
}

#[derive(Debug, Clone)]
struct Check<'a> {
    /// The null-handling branch.
    handler: &'a Body,
    /// The branch taken when the value is present.
    present: Option<&'a Body>,
}

fn is_null_lit(e: &hpl::Expr) -> bool {
    matches!(e.kind, ExprKind::Lit(Value::Null))
}

fn as_check(s: &Stmt) -> Option<Check<'_>> {
    let StmtKind::If { cond, then, els } = &s.kind else {
        return None;
    };
    let ExprKind::Binary(op, a, b) = &cond.kind else {
        return None;
    };
    if is_null_lit(a) == is_null_lit(b) {
        return None;
    }
    let check = match op {
        BinOp::Eq => Check {
            handler: then,
            present: els.as_ref(),
        },
        BinOp::Ne => Check {
            handler: els.as_ref()?,
            present: Some(then),
        },
        _ => return None,
    };
    let nonempty = check.handler.blocks.iter().any(|b| !b.stmts.is_empty());
    nonempty.then_some(check)
}

/// Every not-null check in the program, in method and source order.
pub fn eligible_checks(program: &Program) -> Vec<Location> {
    let mut out = Vec::new();
    for m in &program.methods {
        m.body.visit_stmts(&mut |b, i, s| {
            if as_check(s).is_some() {
                out.push(Location {
                    method: m.id,
                    block: b.id,
                    index: i,
                });
            }
        });
    }
    out
}

/// Block origins entered when the check at `loc` executes: either branch, or the join.
fn witnesses(program: &Program, loc: Location) -> Vec<BlockId> {
    let mut out = Vec::new();
    let Some(stmt) = program.stmt_at(loc) else {
        return out;
    };
    for body in stmt.bodies() {
        if let Some(first) = body.blocks.first() {
            out.push(first.origin);
        }
    }
    let method = program.method(loc.method).expect("location method");
    let mut found = false;
    visit_bodies(&method.body, &mut |body| {
        if found {
            return;
        }
        if let Some(pos) = body.blocks.iter().position(|b| b.id == loc.block) {
            found = true;
            if let Some(next) = body.blocks.get(pos + 1) {
                out.push(next.origin);
            }
        }
    });
    out
}

fn visit_bodies<'a>(body: &'a Body, f: &mut impl FnMut(&'a Body)) {
    f(body);
    for b in &body.blocks {
        for s in &b.stmts {
            for nested in s.bodies() {
                visit_bodies(nested, f);
            }
        }
    }
}

/// Checks executed by at least one request, given the union of block coverage.
pub fn covered_checks(program: &Program, covered: &BTreeSet<BlockId>) -> Vec<Location> {
    eligible_checks(program)
        .into_iter()
        .filter(|loc| witnesses(program, *loc).iter().any(|b| covered.contains(b)))
        .collect()
}

/// Union of block coverage over a production replay of the workload.
pub fn workload_coverage(
    program: &Program,
    store: &Store,
    workload: &Workload,
    limits: ExecLimits,
) -> BTreeSet<BlockId> {
    let fresh = Arc::new(store.fork_at(store.version()));
    replay_workload(program.clone(), fresh, workload, limits)
        .into_iter()
        .filter_map(|x| x.result.ok())
        .flat_map(|r| r.coverage.blocks)
        .collect()
}

/// Removes the null-handling branch of the check at `loc`.
pub fn apply_fault(program: &Program, loc: Location) -> Result<(Program, SeededFault), NoEligibleCheck> {
    let stmt = program.stmt_at(loc).ok_or(NoEligibleCheck)?.clone();
    let check = as_check(&stmt).ok_or(NoEligibleCheck)?;
    let spliced: Vec<Stmt> = check
        .present
        .map(|b| b.blocks.iter().flat_map(|blk| blk.stmts.iter().cloned()).collect())
        .unwrap_or_default();
    let original_method = program.method(loc.method).ok_or(NoEligibleCheck)?.clone();
    let original_counters = program.id_counters();
    let mut out = program.clone();
    let (m, mut alloc) = out.edit_method(loc.method).ok_or(NoEligibleCheck)?;
    let block: &mut Block = m.body.find_block_mut(loc.block).ok_or(NoEligibleCheck)?;
    block.stmts.splice(loc.index..=loc.index, spliced);
    alloc.normalize(&mut m.body);
    let method = m.name.clone();
    let fault = SeededFault {
        id: format!("fault-{method}-{loc}").replace('/', "-"),
        location: loc,
        method,
        removed: stmt,
        original_method,
        original_counters,
    };
    Ok((out, fault))
}

/// Uniformly samples one of `candidates` under `seed` and seeds it.
pub fn seed_null_fault(
    program: &Program,
    candidates: &[Location],
    seed: u64,
) -> Result<(Program, SeededFault), NoEligibleCheck> {
    if candidates.is_empty() {
        return Err(NoEligibleCheck);
    }
    let pick = Rng::new(seed).below(candidates.len() as u64) as usize;
    apply_fault(program, candidates[pick])
}

/// True iff some workload request fails on the faulted program and none fails on the
/// original. Both replays start from `store` as it is now.
pub fn verify_fault_triggers(
    original: &Program,
    faulted: &Program,
    store: &Store,
    workload: &Workload,
    limits: ExecLimits,
) -> bool {
    let run = |p: &Program| {
        let fresh = Arc::new(store.fork_at(store.version()));
        replay_workload(p.clone(), fresh, workload, limits)
            .iter()
            .filter(|x| x.failed())
            .count()
    };
    run(original) == 0 && run(faulted) > 0
}
