//! Candidate patches: the two patch models, application to a program, and diffs.
//!
//! Every edit preserves coverage comparability. A statement that stays in the program
//! keeps its origin; synthesized code (guard bodies, catch handlers) gets fresh origins,
//! so coverage only differs where the patched program actually runs new code.

use std::fmt;

use hpl::{
    parse_method, print_program, BinOp, Block, Body, DeclaredType, Expr, ExprKind, Failure,
    IdAlloc, Location, MethodId, NodeId, Program, Stmt, StmtKind, Value,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::signature::Signature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchModel {
    NullRecovery,
    ExceptionStopper,
    /// A developer-written edit submitted for validation.
    Human,
}

impl PatchModel {
    pub fn name(self) -> &'static str {
        match self {
            PatchModel::NullRecovery => "null-recovery",
            PatchModel::ExceptionStopper => "exception-stopper",
            PatchModel::Human => "human",
        }
    }
}

impl fmt::Display for PatchModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchState {
    Candidate,
    Valid,
    Invalid,
    Regressive,
    Surviving,
    Approved,
    Rejected,
}

impl PatchState {
    pub fn name(self) -> &'static str {
        match self {
            PatchState::Candidate => "candidate",
            PatchState::Valid => "valid",
            PatchState::Invalid => "invalid",
            PatchState::Regressive => "regressive",
            PatchState::Surviving => "surviving",
            PatchState::Approved => "approved",
            PatchState::Rejected => "rejected",
        }
    }

    /// candidate → valid | invalid; valid → regressive | surviving | approved | rejected;
    /// surviving → regressive | approved | rejected.
    pub fn can_become(self, to: PatchState) -> bool {
        use PatchState::*;
        matches!(
            (self, to),
            (Candidate, Valid | Invalid)
                | (Valid, Regressive | Surviving | Approved | Rejected)
                | (Surviving, Regressive | Approved | Rejected)
        )
    }

    /// States whose patches are still regression-tested and counted.
    pub fn in_queue(self) -> bool {
        matches!(self, PatchState::Valid | PatchState::Surviving)
    }

    /// States shown in the ranked report.
    pub fn ranked(self) -> bool {
        matches!(
            self,
            PatchState::Valid | PatchState::Surviving | PatchState::Approved
        )
    }
}

impl fmt::Display for PatchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("patch {id} is {state}, cannot become {to}")]
pub struct WrongState {
    pub id: String,
    pub state: PatchState,
    pub to: PatchState,
}

/// A program transformation. Expressions inside are templates: application copies them
/// with fresh node ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Edit {
    /// Replace the statement with a no-op.
    Skip { at: Location },
    /// `if (guard == null) { S[node := value] } else { S }` in place of `S`.
    GuardSubstitute {
        at: Location,
        guard: Expr,
        node: NodeId,
        value: Expr,
    },
    /// `if (guard == null) { return value; }` inserted before the statement.
    GuardReturn {
        at: Location,
        guard: Expr,
        value: Option<Expr>,
    },
    /// Wrap the whole method body in `try { ... } catch { return value; }`.
    CatchReturn {
        method: MethodId,
        value: Option<Expr>,
    },
    /// Replace a method with new source text.
    ReplaceMethod { method: MethodId, source: String },
}

impl Edit {
    pub fn method(&self) -> MethodId {
        match self {
            Edit::Skip { at } | Edit::GuardSubstitute { at, .. } | Edit::GuardReturn { at, .. } => {
                at.method
            }
            Edit::CatchReturn { method, .. } | Edit::ReplaceMethod { method, .. } => *method,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("patch was generated for program version {patch}, program is at {program}")]
    StaleProgramVersion { patch: u64, program: u64 },
    #[error("patch target {0} does not exist")]
    TargetMissing(String),
    #[error("replacement does not parse: {0}")]
    BadSource(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub id: String,
    pub model: PatchModel,
    pub strategy: String,
    /// `m<i>/b<j>/<k>` for statement edits, `frame:m<i>` for method-level edits.
    pub target: String,
    /// Human-readable injected value, variable or replacement summary.
    pub payload: String,
    pub edit: Edit,
    pub origin_version: u64,
    pub state: PatchState,
    pub regression_success_count: u64,
    pub signature: Signature,
}

impl CandidatePatch {
    pub fn new(
        model: PatchModel,
        strategy: &str,
        target: String,
        payload: String,
        edit: Edit,
        origin_version: u64,
        signature: Signature,
    ) -> Self {
        let id = patch_id(model, strategy, &target, &payload, &signature);
        CandidatePatch {
            id,
            model,
            strategy: strategy.to_string(),
            target,
            payload,
            edit,
            origin_version,
            state: PatchState::Candidate,
            regression_success_count: 0,
            signature,
        }
    }

    pub fn transition(&mut self, to: PatchState) -> Result<PatchState, WrongState> {
        if !self.state.can_become(to) {
            return Err(WrongState {
                id: self.id.clone(),
                state: self.state,
                to,
            });
        }
        Ok(std::mem::replace(&mut self.state, to))
    }

    pub fn apply(&self, program: &Program) -> Result<Program, ApplyError> {
        apply_patch(program, self)
    }
}

/// `p` plus the first 16 hex digits of a SHA-256 over the patch content. The signature
/// is part of the content: two failures in one shared method get distinct patches.
pub fn patch_id(
    model: PatchModel,
    strategy: &str,
    target: &str,
    payload: &str,
    signature: &Signature,
) -> String {
    let mut h = Sha256::new();
    for part in [model.name(), strategy, target, payload, &signature.to_string()] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("p{}", &hex::encode(h.finalize())[..16])
}

pub fn apply_patch(program: &Program, patch: &CandidatePatch) -> Result<Program, ApplyError> {
    if patch.origin_version != program.version {
        return Err(ApplyError::StaleProgramVersion {
            patch: patch.origin_version,
            program: program.version,
        });
    }
    let mut out = apply_edit(program, &patch.edit)?;
    out.version = program.version + 1;
    Ok(out)
}

/// Applies an edit without the version check. The result keeps the input's version.
pub fn apply_edit(program: &Program, edit: &Edit) -> Result<Program, ApplyError> {
    let mut out = program.clone();
    let missing = || ApplyError::TargetMissing(edit_target(edit));
    match edit {
        Edit::ReplaceMethod { method, source } => {
            let old = program.method(*method).ok_or_else(missing)?;
            let mut m = parse_method(source, &mut out).map_err(|e| ApplyError::BadSource(e.to_string()))?;
            if m.name != old.name {
                return Err(ApplyError::BadSource(format!(
                    "replacement defines {}, expected {}",
                    m.name, old.name
                )));
            }
            m.id = *method;
            inherit_origins(&old.body, &mut m.body);
            *out.method_mut(*method).expect("checked above") = m;
        }
        Edit::CatchReturn { method, value } => {
            let (m, mut alloc) = out.edit_method(*method).ok_or_else(missing)?;
            let origin = m.body.blocks[0].origin;
            let ret = StmtKind::Return(value.as_ref().map(|v| fresh_expr(&mut alloc, v)));
            let handler = alloc.synthetic_body(vec![ret]);
            let original = std::mem::replace(&mut m.body, Body { blocks: vec![] });
            m.body = Body {
                blocks: vec![Block {
                    id: alloc.block(),
                    origin,
                    stmts: vec![Stmt {
                        origin,
                        kind: StmtKind::Try {
                            body: original,
                            handler,
                        },
                    }],
                }],
            };
        }
        Edit::Skip { at } | Edit::GuardSubstitute { at, .. } | Edit::GuardReturn { at, .. } => {
            let (m, mut alloc) = out.edit_method(at.method).ok_or_else(missing)?;
            let block = m.body.find_block_mut(at.block).ok_or_else(missing)?;
            let s = block.stmts.get(at.index).ok_or_else(missing)?.clone();
            match edit {
                Edit::Skip { .. } => {
                    block.stmts[at.index] = Stmt {
                        origin: s.origin,
                        kind: StmtKind::Skip,
                    };
                }
                Edit::GuardSubstitute {
                    guard, node, value, ..
                } => {
                    let mut substituted = s.clone();
                    let slot = substituted
                        .exprs_mut()
                        .into_iter()
                        .find_map(|e| e.find_mut(*node))
                        .ok_or_else(missing)?;
                    *slot = value.clone();
                    let then_id = alloc.block();
                    let then = Body {
                        blocks: vec![Block {
                            id: then_id,
                            origin: then_id,
                            stmts: vec![alloc.synthesize_stmt(&substituted, then_id)],
                        }],
                    };
                    let els = Body {
                        blocks: vec![Block {
                            id: alloc.block(),
                            origin: s.origin,
                            stmts: vec![s.clone()],
                        }],
                    };
                    let cond = null_test(&mut alloc, guard);
                    block.stmts[at.index] = Stmt {
                        origin: s.origin,
                        kind: StmtKind::If {
                            cond,
                            then,
                            els: Some(els),
                        },
                    };
                }
                Edit::GuardReturn { guard, value, .. } => {
                    let ret = StmtKind::Return(value.as_ref().map(|v| fresh_expr(&mut alloc, v)));
                    let then = alloc.synthetic_body(vec![ret]);
                    let cond = null_test(&mut alloc, guard);
                    block.stmts.insert(
                        at.index,
                        Stmt {
                            origin: s.origin,
                            kind: StmtKind::If {
                                cond,
                                then,
                                els: None,
                            },
                        },
                    );
                }
                _ => unreachable!("statement edits only"),
            }
            alloc.normalize(&mut m.body);
        }
    }
    Ok(out)
}

fn edit_target(edit: &Edit) -> String {
    match edit {
        Edit::Skip { at } | Edit::GuardSubstitute { at, .. } | Edit::GuardReturn { at, .. } => {
            at.to_string()
        }
        Edit::CatchReturn { method, .. } | Edit::ReplaceMethod { method, .. } => {
            format!("frame:{method}")
        }
    }
}

fn fresh_expr(alloc: &mut IdAlloc<'_>, template: &Expr) -> Expr {
    let mut e = template.clone();
    alloc.renumber_expr(&mut e);
    e
}

fn null_test(alloc: &mut IdAlloc<'_>, guard: &Expr) -> Expr {
    let lhs = fresh_expr(alloc, guard);
    let rhs = alloc.expr(ExprKind::Lit(Value::Null));
    alloc.expr(ExprKind::Binary(BinOp::Eq, Box::new(lhs), Box::new(rhs)))
}

/// Positional origin inheritance: when the replacement has as many blocks as the
/// original, the i-th block (pre-order) takes the i-th original block's origin, and
/// its statements follow. Otherwise the replacement keeps fresh origins.
fn inherit_origins(old: &Body, new: &mut Body) {
    let origins: Vec<_> = old.all_blocks().iter().map(|b| b.origin).collect();
    if origins.len() != new.all_blocks().len() {
        return;
    }
    let mut it = origins.into_iter();
    relabel(new, &mut it);
}

fn relabel(body: &mut Body, origins: &mut impl Iterator<Item = hpl::BlockId>) {
    for b in &mut body.blocks {
        b.origin = origins.next().expect("counted");
        for s in &mut b.stmts {
            s.origin = b.origin;
            for nested in s.bodies_mut() {
                relabel(nested, origins);
            }
        }
    }
}

/// Unified diff of the canonical source before and after the patch. Empty when the
/// patch does not change the text.
pub fn render_diff(program: &Program, patch: &CandidatePatch) -> Result<String, ApplyError> {
    let after = apply_edit(program, &patch.edit)?;
    Ok(diff_programs(program, &after))
}

pub fn diff_programs(before: &Program, after: &Program) -> String {
    let a = print_program(before);
    let b = print_program(after);
    if a == b {
        return String::new();
    }
    similar::TextDiff::from_lines(&a, &b)
        .unified_diff()
        .context_radius(3)
        .header("a/app.hpl", "b/app.hpl")
        .to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("failure is {0}, not a null dereference")]
pub struct NotANullDeref(pub String);

/// All patches of one model for one failure, in enumeration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub model: PatchModel,
    pub signature: Signature,
    pub patches: Vec<CandidatePatch>,
}

#[derive(Serialize)]
struct SpaceLine<'a> {
    #[serde(flatten)]
    patch: &'a CandidatePatch,
    diff: String,
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// One patch per line, with its diff against `program`.
    pub fn to_json_lines(&self, program: &Program) -> String {
        self.patches
            .iter()
            .map(|p| {
                let line = SpaceLine {
                    patch: p,
                    diff: render_diff(program, p).unwrap_or_default(),
                };
                serde_json::to_string(&line).expect("patch serializes") + "\n"
            })
            .collect()
    }

    fn push_unique(&mut self, p: CandidatePatch) {
        if !self.patches.iter().any(|q| q.id == p.id) {
            self.patches.push(p);
        }
    }
}

fn lit(v: Value) -> Expr {
    Expr {
        id: NodeId(0),
        kind: ExprKind::Lit(v),
    }
}

fn var(name: &str) -> Expr {
    Expr {
        id: NodeId(0),
        kind: ExprKind::Var(name.to_string()),
    }
}

pub const S1: &str = "S1-inject-variable";
pub const S2: &str = "S2-inject-default";
pub const S3: &str = "S3-skip";
pub const S4: &str = "S4-return-default";
pub const S5: &str = "S5-return-variable";
pub const S6: &str = "S6-return-void";
pub const CATCH_RETURN: &str = "catch-return";

/// Null-recovery strategies S1 to S6 at the failing statement, in strategy order and
/// then scope declaration order. Substitution strategies need an expression to
/// substitute; a null assignment target has none, so only S3 to S6 apply there.
pub fn enumerate_null_recovery(
    program: &Program,
    failure: &Failure,
    signature: &Signature,
) -> Result<SearchSpace, NotANullDeref> {
    let site = failure
        .null_site
        .as_ref()
        .filter(|_| failure.kind == hpl::ExceptionKind::NullDeref)
        .ok_or_else(|| NotANullDeref(failure.kind.to_string()))?;
    let at = failure.location;
    let mut space = SearchSpace {
        model: PatchModel::NullRecovery,
        signature: signature.clone(),
        patches: Vec::new(),
    };
    let Some(method) = program.method(at.method) else {
        return Ok(space);
    };
    let scope = &failure.innermost_scope().vars;
    let guard_text = hpl::print_expr(&site.expr);
    let target = at.to_string();
    let mut add = |strategy: &str, payload: String, edit: Edit| {
        space.push_unique(CandidatePatch::new(
            PatchModel::NullRecovery,
            strategy,
            target.clone(),
            payload,
            edit,
            program.version,
            signature.clone(),
        ));
    };
    if let Some(node) = site.node {
        let is_self = |name: &str| matches!(&site.expr.kind, ExprKind::Var(v) if v == name);
        for v in scope {
            if v.ty.compatible(site.expected) && !is_self(&v.name) {
                add(
                    S1,
                    format!("{guard_text} := {}", v.name),
                    Edit::GuardSubstitute {
                        at,
                        guard: site.expr.clone(),
                        node,
                        value: var(&v.name),
                    },
                );
            }
        }
        for d in site.expected.defaults() {
            add(
                S2,
                format!("{guard_text} := {}", d.literal()),
                Edit::GuardSubstitute {
                    at,
                    guard: site.expr.clone(),
                    node,
                    value: lit(d),
                },
            );
        }
    }
    add(S3, String::new(), Edit::Skip { at });
    match method.ret {
        Some(ret) => {
            for d in ret.defaults() {
                add(
                    S4,
                    format!("return {}", d.literal()),
                    Edit::GuardReturn {
                        at,
                        guard: site.expr.clone(),
                        value: Some(lit(d)),
                    },
                );
            }
            for v in scope.iter().filter(|v| v.ty.compatible(ret)) {
                add(
                    S5,
                    format!("return {}", v.name),
                    Edit::GuardReturn {
                        at,
                        guard: site.expr.clone(),
                        value: Some(var(&v.name)),
                    },
                );
            }
        }
        None => add(
            S6,
            "return".into(),
            Edit::GuardReturn {
                at,
                guard: site.expr.clone(),
                value: None,
            },
        ),
    }
    Ok(space)
}

/// The value a non-void frame returns by default.
pub fn default_return(ret: DeclaredType) -> Value {
    ret.defaults().into_iter().next().expect("every type has a default")
}

/// Method-level catch-and-return for every frame of the failure, innermost first. A
/// void frame yields a plain return; a non-void frame yields one return per compatible
/// variable in its scope, then one default return. A method that occurs in several
/// frames produces identical edits, which are kept once.
pub fn enumerate_exception_stopper(
    program: &Program,
    failure: &Failure,
    signature: &Signature,
) -> SearchSpace {
    let mut space = SearchSpace {
        model: PatchModel::ExceptionStopper,
        signature: signature.clone(),
        patches: Vec::new(),
    };
    for frame in failure.scopes.iter().rev() {
        let Some(method) = program.method(frame.method) else {
            continue;
        };
        let target = format!("frame:{}", method.id);
        let mut add = |payload: String, value: Option<Expr>| {
            space.push_unique(CandidatePatch::new(
                PatchModel::ExceptionStopper,
                CATCH_RETURN,
                target.clone(),
                payload,
                Edit::CatchReturn {
                    method: method.id,
                    value,
                },
                program.version,
                signature.clone(),
            ));
        };
        match method.ret {
            None => add("return".into(), None),
            Some(ret) => {
                for v in frame.vars.iter().filter(|v| v.ty.compatible(ret)) {
                    add(format!("return {}", v.name), Some(var(&v.name)));
                }
                let d = default_return(ret);
                add(format!("return {}", d.literal()), Some(lit(d)));
            }
        }
    }
    space
}

/// A developer edit replacing one method, as a patch.
pub fn human_patch(
    program: &Program,
    method_name: &str,
    source: &str,
    signature: Signature,
) -> Result<CandidatePatch, ApplyError> {
    let m = program
        .method_by_name(method_name)
        .ok_or_else(|| ApplyError::TargetMissing(method_name.to_string()))?;
    let edit = Edit::ReplaceMethod {
        method: m.id,
        source: source.to_string(),
    };
    apply_edit(program, &edit)?;
    let digest = hex::encode(Sha256::digest(source.as_bytes()));
    Ok(CandidatePatch::new(
        PatchModel::Human,
        "replace-method",
        format!("frame:{}", m.id),
        format!("{method_name} sha256:{}", &digest[..12]),
        edit,
        program.version,
        signature,
    ))
}
