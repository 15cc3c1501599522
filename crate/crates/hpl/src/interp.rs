//! Instrumented interpreter.
//!
//! Execution is deterministic for a given program, request, store contents and limits.
//! Coverage is recorded in origin block ids. Failures carry the full stack and a deep
//! copy of every frame's variables at the moment of the throw.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast::*;
use crate::envelope::{request_record, RequestEnvelope, ResponseEnvelope};
use crate::value::{DeclaredType, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub max_steps: u64,
    /// Call depth beyond which execution fails as a timeout.
    pub max_depth: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            max_steps: 100_000,
            max_depth: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("sandbox violation: write to `{key}` refused")]
pub struct SandboxViolation {
    pub key: String,
}

/// The store as seen by a running handler.
pub trait StoreAccess {
    fn get(&self, key: &str) -> Value;
    fn put(&mut self, key: &str, value: Value) -> Result<(), SandboxViolation>;
}

/// Plain in-memory store, for tests and scratch runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryStore(pub std::collections::BTreeMap<String, Value>);

impl StoreAccess for MemoryStore {
    fn get(&self, key: &str) -> Value {
        self.0.get(key).cloned().unwrap_or(Value::Null)
    }

    fn put(&mut self, key: &str, value: Value) -> Result<(), SandboxViolation> {
        self.0.insert(key.to_string(), value);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("no route for {verb} {path}")]
    NoRoute { verb: String, path: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxViolation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExceptionKind {
    NullDeref,
    DivByZero,
    IndexOutOfBounds,
    TypeError,
    ExplicitThrow,
    Timeout,
}

impl ExceptionKind {
    pub const ALL: [ExceptionKind; 6] = [
        ExceptionKind::NullDeref,
        ExceptionKind::DivByZero,
        ExceptionKind::IndexOutOfBounds,
        ExceptionKind::TypeError,
        ExceptionKind::ExplicitThrow,
        ExceptionKind::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExceptionKind::NullDeref => "null-deref",
            ExceptionKind::DivByZero => "div-by-zero",
            ExceptionKind::IndexOutOfBounds => "index-out-of-bounds",
            ExceptionKind::TypeError => "type-error",
            ExceptionKind::ExplicitThrow => "explicit-throw",
            ExceptionKind::Timeout => "timeout",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ExceptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The sub-expression that evaluated to null where a non-null value was required.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullSite {
    /// `None` when the null value was an assignment-target prefix rather than an
    /// expression node; `expr` is then a reconstruction of that prefix.
    pub node: Option<NodeId>,
    pub expr: Expr,
    pub expected: DeclaredType,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeVar {
    pub name: String,
    pub ty: DeclaredType,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameScope {
    pub method: MethodId,
    pub vars: Vec<ScopeVar>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: ExceptionKind,
    pub message: String,
    /// Innermost frame's current statement.
    pub location: Location,
    pub null_site: Option<NullSite>,
    /// One entry per active frame, outermost first.
    pub stack: Vec<Location>,
    /// Parallel to `stack`.
    pub scopes: Vec<FrameScope>,
}

impl Failure {
    pub fn innermost_scope(&self) -> &FrameScope {
        self.scopes.last().expect("a failure has at least one frame")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.location, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success(ResponseEnvelope),
    Exception(Failure),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTrace {
    pub methods: BTreeSet<MethodId>,
    /// Origin block ids.
    pub blocks: BTreeSet<BlockId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreWrite {
    pub key: String,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub route: String,
    pub outcome: Outcome,
    pub coverage: CoverageTrace,
    pub store_writes: Vec<StoreWrite>,
    pub steps: u64,
}

impl ExecutionResult {
    pub fn failure(&self) -> Option<&Failure> {
        match &self.outcome {
            Outcome::Exception(f) => Some(f),
            Outcome::Success(_) => None,
        }
    }

    pub fn response(&self) -> Option<&ResponseEnvelope> {
        match &self.outcome {
            Outcome::Success(r) => Some(r),
            Outcome::Exception(_) => None,
        }
    }
}

/// Runs the route handler matching `req`.
pub fn execute(
    program: &Program,
    req: &RequestEnvelope,
    store: &mut dyn StoreAccess,
    limits: ExecLimits,
) -> Result<ExecutionResult, ExecError> {
    let m = program
        .match_route(&req.method, &req.path)
        .ok_or_else(|| ExecError::NoRoute {
            verb: req.method.clone(),
            path: req.path.clone(),
        })?;
    let entry = program
        .method_by_name(&m.method)
        .expect("validated programs resolve route targets");
    let mut machine = Machine {
        program,
        store,
        limits,
        steps: 0,
        frames: Vec::new(),
        coverage: CoverageTrace::default(),
        writes: Vec::new(),
        response: None,
        headers: Vec::new(),
    };
    let args = match entry.params.len() {
        0 => vec![],
        _ => vec![request_record(req, &m)],
    };
    let outcome = match machine.call(entry, args) {
        Ok(_) => {
            let (status, body) = machine.response.take().unwrap_or((200, String::new()));
            Outcome::Success(ResponseEnvelope {
                status,
                headers: std::mem::take(&mut machine.headers),
                body: body.into_bytes(),
                produced_at_ms: req.received_at_ms,
                exception: None,
            })
        }
        Err(Raise::Exc(f)) => Outcome::Exception(*f),
        Err(Raise::Abort(e)) => return Err(e),
    };
    Ok(ExecutionResult {
        route: m.template,
        outcome,
        coverage: machine.coverage,
        store_writes: machine.writes,
        steps: machine.steps,
    })
}

enum Raise {
    Exc(Box<Failure>),
    Abort(ExecError),
}

enum Flow {
    Next,
    Return(Value),
}

struct Frame {
    method: MethodId,
    vars: Vec<ScopeVar>,
    loc: Location,
}

impl Frame {
    fn lookup(&self, name: &str) -> Option<&ScopeVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    fn lookup_mut(&mut self, name: &str) -> Option<&mut ScopeVar> {
        self.vars.iter_mut().find(|v| v.name == name)
    }

    fn bind(&mut self, name: &str, ty: DeclaredType, value: Value) {
        match self.lookup_mut(name) {
            Some(v) => {
                v.ty = ty;
                v.value = value;
            }
            None => self.vars.push(ScopeVar {
                name: name.to_string(),
                ty,
                value,
            }),
        }
    }
}

type R<T> = Result<T, Raise>;

struct Machine<'p, 's> {
    program: &'p Program,
    store: &'s mut dyn StoreAccess,
    limits: ExecLimits,
    steps: u64,
    frames: Vec<Frame>,
    coverage: CoverageTrace,
    writes: Vec<StoreWrite>,
    response: Option<(u16, String)>,
    headers: Vec<(String, String)>,
}

/// Path step of an assignment target after its index expressions are evaluated.
enum Key {
    Field(String),
    Index(Value),
}

impl<'p> Machine<'p, '_> {
    fn frame(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("active frame")
    }

    fn raise(&self, kind: ExceptionKind, message: impl Into<String>, site: Option<NullSite>) -> Raise {
        let top = self.frames.last().expect("active frame");
        Raise::Exc(Box::new(Failure {
            kind,
            message: message.into(),
            location: top.loc,
            null_site: site,
            stack: self.frames.iter().map(|f| f.loc).collect(),
            scopes: self
                .frames
                .iter()
                .map(|f| FrameScope {
                    method: f.method,
                    vars: f.vars.clone(),
                })
                .collect(),
        }))
    }

    fn type_error(&self, message: impl Into<String>) -> Raise {
        self.raise(ExceptionKind::TypeError, message, None)
    }

    fn null_deref(&self, e: &Expr, expected: DeclaredType, what: &str) -> Raise {
        self.raise(
            ExceptionKind::NullDeref,
            format!("null {what}"),
            Some(NullSite {
                node: Some(e.id),
                expr: e.clone(),
                expected,
            }),
        )
    }

    fn tick(&mut self) -> R<()> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            return Err(self.raise(ExceptionKind::Timeout, "step limit exceeded", None));
        }
        Ok(())
    }

    fn call(&mut self, m: &'p Method, args: Vec<Value>) -> R<Value> {
        if args.len() != m.params.len() {
            return Err(self.type_error(format!(
                "{} expects {} argument(s), got {}",
                m.name,
                m.params.len(),
                args.len()
            )));
        }
        for (p, a) in m.params.iter().zip(&args) {
            if !p.ty.admits(a) {
                return Err(self.type_error(format!(
                    "argument {} of {} expects {}, got {}",
                    p.name,
                    m.name,
                    p.ty,
                    a.kind_name()
                )));
            }
        }
        if self.frames.len() >= self.limits.max_depth {
            return Err(self.raise(ExceptionKind::Timeout, "call depth exceeded", None));
        }
        let first = m.body.blocks.first().map(|b| b.id).unwrap_or(BlockId(0));
        self.frames.push(Frame {
            method: m.id,
            vars: m
                .params
                .iter()
                .zip(args)
                .map(|(p, v)| ScopeVar {
                    name: p.name.clone(),
                    ty: p.ty,
                    value: v,
                })
                .collect(),
            loc: Location {
                method: m.id,
                block: first,
                index: 0,
            },
        });
        self.coverage.methods.insert(m.id);
        let result = self.exec_body(&m.body).and_then(|flow| {
            let v = match flow {
                Flow::Next => Value::Null,
                Flow::Return(v) => v,
            };
            match m.ret {
                None => Ok(Value::Null),
                Some(t) if t.admits(&v) => Ok(v),
                Some(t) => Err(self.type_error(format!(
                    "{} returns {}, got {}",
                    m.name,
                    t,
                    v.kind_name()
                ))),
            }
        });
        self.frames.pop();
        result
    }

    fn exec_body(&mut self, body: &'p Body) -> R<Flow> {
        for block in &body.blocks {
            self.coverage.blocks.insert(block.origin);
            for (i, s) in block.stmts.iter().enumerate() {
                let method = self.frame().method;
                self.frame().loc = Location {
                    method,
                    block: block.id,
                    index: i,
                };
                self.coverage.blocks.insert(s.origin);
                self.tick()?;
                if let Flow::Return(v) = self.exec_stmt(s)? {
                    return Ok(Flow::Return(v));
                }
            }
        }
        Ok(Flow::Next)
    }

    fn cond(&mut self, e: &'p Expr) -> R<bool> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            Value::Null => Err(self.null_deref(e, DeclaredType::Bool, "condition")),
            other => Err(self.type_error(format!("condition is {}", other.kind_name()))),
        }
    }

    fn exec_stmt(&mut self, s: &'p Stmt) -> R<Flow> {
        match &s.kind {
            StmtKind::Let { name, ty, value } => {
                let v = self.eval(value)?;
                let ty = ty.unwrap_or(DeclaredType::Any);
                if !ty.admits(&v) {
                    return Err(self.type_error(format!(
                        "cannot bind {} to {name}: {ty}",
                        v.kind_name()
                    )));
                }
                self.frame().bind(name, ty, v);
            }
            StmtKind::Assign { target, value } => self.assign(target, value)?,
            StmtKind::If { cond, then, els } => {
                if self.cond(cond)? {
                    return self.exec_body(then);
                } else if let Some(els) = els {
                    return self.exec_body(els);
                }
            }
            StmtKind::While { cond, body } => {
                while self.cond(cond)? {
                    if let Flow::Return(v) = self.exec_body(body)? {
                        return Ok(Flow::Return(v));
                    }
                    self.tick()?;
                }
            }
            StmtKind::Try { body, handler } => {
                let depth = self.frames.len();
                match self.exec_body(body) {
                    Err(Raise::Exc(f)) if f.kind != ExceptionKind::Timeout => {
                        debug_assert_eq!(self.frames.len(), depth);
                        return self.exec_body(handler);
                    }
                    other => return other,
                }
            }
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e)?,
                    None => Value::Null,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Throw(e) => {
                let v = self.eval(e)?;
                return Err(self.raise(ExceptionKind::ExplicitThrow, v.render(), None));
            }
            StmtKind::Respond { status, body } => {
                let st = match self.eval(status)? {
                    Value::Int(i) if (100..=599).contains(&i) => i as u16,
                    Value::Null => return Err(self.null_deref(status, DeclaredType::Int, "status")),
                    other => return Err(self.type_error(format!("bad status {}", other.literal()))),
                };
                let b = self.eval(body)?.render();
                if self.response.is_some() {
                    return Err(self.type_error("response already sent"));
                }
                self.response = Some((st, b));
            }
            StmtKind::Skip => {}
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
        }
        Ok(Flow::Next)
    }

    fn assign(&mut self, target: &'p LValue, value: &'p Expr) -> R<()> {
        let mut keys = Vec::with_capacity(target.path.len());
        for a in &target.path {
            keys.push(match a {
                Accessor::Field(f) => Key::Field(f.clone()),
                Accessor::Index(e) => Key::Index(self.eval(e)?),
            });
        }
        let v = self.eval(value)?;
        let Some(var) = self.frame().lookup(&target.root) else {
            return Err(self.type_error(format!("undefined variable {}", target.root)));
        };
        if keys.is_empty() {
            if !var.ty.admits(&v) {
                let msg = format!("cannot assign {} to {}: {}", v.kind_name(), var.name, var.ty);
                return Err(self.type_error(msg));
            }
            self.frame().lookup_mut(&target.root).expect("bound").value = v;
            return Ok(());
        }
        let root = target.root.clone();
        let outcome = {
            let slot = &mut self.frame().lookup_mut(&root).expect("bound").value;
            store_path(slot, &keys, v)
        };
        match outcome {
            Ok(()) => Ok(()),
            Err(PathError::Null(depth, expected)) => {
                let expr = prefix_expr(target, depth);
                Err(self.raise(
                    ExceptionKind::NullDeref,
                    "null assignment target",
                    Some(NullSite {
                        node: None,
                        expr,
                        expected,
                    }),
                ))
            }
            Err(PathError::Bounds(i, n)) => Err(self.raise(
                ExceptionKind::IndexOutOfBounds,
                format!("index {i} out of bounds for length {n}"),
                None,
            )),
            Err(PathError::Type(msg)) => Err(self.type_error(msg)),
        }
    }

    fn eval(&mut self, e: &'p Expr) -> R<Value> {
        self.tick()?;
        Ok(match &e.kind {
            ExprKind::Lit(v) => v.clone(),
            ExprKind::Var(n) => match self.frames.last().and_then(|f| f.lookup(n)) {
                Some(v) => v.value.clone(),
                None => return Err(self.type_error(format!("undefined variable {n}"))),
            },
            ExprKind::RecordLit(fields) => {
                let mut out = std::collections::BTreeMap::new();
                for (k, v) in fields {
                    let v = self.eval(v)?;
                    out.insert(k.clone(), v);
                }
                Value::Record(out)
            }
            ExprKind::ListLit(items) => {
                let mut out = Vec::with_capacity(items.len());
                for i in items {
                    out.push(self.eval(i)?);
                }
                Value::List(out)
            }
            ExprKind::Field(base, name) => match self.eval(base)? {
                Value::Record(mut m) => m.remove(name).unwrap_or(Value::Null),
                Value::Null => {
                    return Err(self.null_deref(base, DeclaredType::Record, &format!("dereference .{name}")))
                }
                other => {
                    return Err(self.type_error(format!("field .{name} of {}", other.kind_name())))
                }
            },
            ExprKind::Index(base, idx) => {
                let b = self.eval(base)?;
                let i = self.eval(idx)?;
                match (b, i) {
                    (Value::Null, i) => {
                        let expected = if matches!(i, Value::Str(_)) {
                            DeclaredType::Record
                        } else {
                            DeclaredType::List
                        };
                        return Err(self.null_deref(base, expected, "indexed"));
                    }
                    (Value::Record(_) | Value::Str(_) | Value::List(_), Value::Null) => {
                        return Err(self.null_deref(idx, DeclaredType::Any, "index"));
                    }
                    (Value::List(mut l), Value::Int(i)) => {
                        let n = l.len();
                        if i < 0 || i as usize >= n {
                            return Err(self.oob(i, n));
                        }
                        l.swap_remove(i as usize)
                    }
                    (Value::Str(s), Value::Int(i)) => {
                        let n = s.chars().count();
                        if i < 0 || i as usize >= n {
                            return Err(self.oob(i, n));
                        }
                        Value::Str(s.chars().nth(i as usize).expect("in bounds").to_string())
                    }
                    (Value::Record(mut m), Value::Str(k)) => m.remove(&k).unwrap_or(Value::Null),
                    (b, i) => {
                        return Err(self.type_error(format!(
                            "cannot index {} with {}",
                            b.kind_name(),
                            i.kind_name()
                        )))
                    }
                }
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner)?;
                match (op, v) {
                    (UnOp::Neg, Value::Int(i)) => Value::Int(i.wrapping_neg()),
                    (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (UnOp::Neg, Value::Null) => {
                        return Err(self.null_deref(inner, DeclaredType::Int, "operand"))
                    }
                    (UnOp::Not, Value::Null) => {
                        return Err(self.null_deref(inner, DeclaredType::Bool, "operand"))
                    }
                    (_, v) => return Err(self.type_error(format!("bad operand {}", v.kind_name()))),
                }
            }
            ExprKind::Binary(op, a, b) => self.binary(*op, a, b)?,
            ExprKind::Ternary(c, a, b) => {
                if self.cond(c)? {
                    self.eval(a)?
                } else {
                    self.eval(b)?
                }
            }
            ExprKind::Call(name, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let Some(m) = self.program.method_by_name(name) else {
                    return Err(self.type_error(format!("undefined method {name}")));
                };
                self.call(m, vals)?
            }
            ExprKind::Builtin(b, args) => self.builtin(*b, args)?,
            ExprKind::StoreGet(k) => {
                let key = self.key(k)?;
                self.store.get(&key)
            }
            ExprKind::StorePut(k, v) => {
                let key = self.key(k)?;
                let val = self.eval(v)?;
                self.store
                    .put(&key, val.clone())
                    .map_err(|e| Raise::Abort(e.into()))?;
                self.writes.push(StoreWrite { key, value: val });
                Value::Null
            }
        })
    }

    fn oob(&self, i: i64, n: usize) -> Raise {
        self.raise(
            ExceptionKind::IndexOutOfBounds,
            format!("index {i} out of bounds for length {n}"),
            None,
        )
    }

    fn key(&mut self, k: &'p Expr) -> R<String> {
        match self.eval(k)? {
            Value::Str(s) => Ok(s),
            Value::Null => Err(self.null_deref(k, DeclaredType::Str, "store key")),
            other => Err(self.type_error(format!("store key is {}", other.kind_name()))),
        }
    }

    fn binary(&mut self, op: BinOp, a: &'p Expr, b: &'p Expr) -> R<Value> {
        if matches!(op, BinOp::And | BinOp::Or) {
            let l = self.cond(a)?;
            if l == (op == BinOp::Or) {
                return Ok(Value::Bool(l));
            }
            return Ok(Value::Bool(self.cond(b)?));
        }
        let l = self.eval(a)?;
        let r = self.eval(b)?;
        Ok(match op {
            BinOp::Eq => Value::Bool(l == r),
            BinOp::Ne => Value::Bool(l != r),
            BinOp::Add => match (l, r) {
                (Value::Int(x), Value::Int(y)) => Value::Int(x.wrapping_add(y)),
                (l @ Value::Str(_), r) | (l, r @ Value::Str(_)) => {
                    Value::Str(l.render() + &r.render())
                }
                (Value::Null, _) => return Err(self.null_deref(a, DeclaredType::Int, "operand")),
                (_, Value::Null) => return Err(self.null_deref(b, DeclaredType::Int, "operand")),
                (l, r) => return Err(self.type_error(format!("{} + {}", l.kind_name(), r.kind_name()))),
            },
            BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
                let (x, y) = self.ints(a, l, b, r, op)?;
                match op {
                    BinOp::Sub => Value::Int(x.wrapping_sub(y)),
                    BinOp::Mul => Value::Int(x.wrapping_mul(y)),
                    _ if y == 0 => {
                        return Err(self.raise(ExceptionKind::DivByZero, "division by zero", None))
                    }
                    BinOp::Div => Value::Int(x.wrapping_div(y)),
                    _ => Value::Int(x.wrapping_rem(y)),
                }
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let ord = match (&l, &r) {
                    (Value::Int(x), Value::Int(y)) => x.cmp(y),
                    (Value::Str(x), Value::Str(y)) => x.cmp(y),
                    (Value::Null, other) | (other, Value::Null) => {
                        let expected = if matches!(other, Value::Str(_)) {
                            DeclaredType::Str
                        } else {
                            DeclaredType::Int
                        };
                        let site = if l.is_null() { a } else { b };
                        return Err(self.null_deref(site, expected, "operand"));
                    }
                    _ => {
                        return Err(self.type_error(format!(
                            "cannot compare {} with {}",
                            l.kind_name(),
                            r.kind_name()
                        )))
                    }
                };
                Value::Bool(match op {
                    BinOp::Lt => ord.is_lt(),
                    BinOp::Le => ord.is_le(),
                    BinOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                })
            }
            BinOp::And | BinOp::Or => unreachable!("short-circuit handled above"),
        })
    }

    fn ints(&self, a: &Expr, l: Value, b: &Expr, r: Value, op: BinOp) -> R<(i64, i64)> {
        match (l, r) {
            (Value::Int(x), Value::Int(y)) => Ok((x, y)),
            (Value::Null, _) => Err(self.null_deref(a, DeclaredType::Int, "operand")),
            (_, Value::Null) => Err(self.null_deref(b, DeclaredType::Int, "operand")),
            (l, r) => Err(self.type_error(format!(
                "{} {} {}",
                l.kind_name(),
                op.symbol(),
                r.kind_name()
            ))),
        }
    }

    fn builtin(&mut self, b: Builtin, args: &'p [Expr]) -> R<Value> {
        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            vals.push(self.eval(a)?);
        }
        let null = |m: &Self, i: usize, t: DeclaredType| {
            m.null_deref(&args[i], t, &format!("argument to {}", b.name()))
        };
        let bad = |m: &Self| {
            m.type_error(format!(
                "bad arguments to {}: {}",
                b.name(),
                vals.iter().map(Value::kind_name).collect::<Vec<_>>().join(", ")
            ))
        };
        Ok(match b {
            Builtin::Len => match &vals[0] {
                Value::Str(s) => Value::Int(s.chars().count() as i64),
                Value::List(l) => Value::Int(l.len() as i64),
                Value::Record(r) => Value::Int(r.len() as i64),
                Value::Null => return Err(null(self, 0, DeclaredType::Any)),
                _ => return Err(bad(self)),
            },
            Builtin::Str => Value::Str(vals[0].render()),
            Builtin::Int => match &vals[0] {
                Value::Int(i) => Value::Int(*i),
                Value::Str(s) => match s.trim().parse::<i64>() {
                    Ok(i) => Value::Int(i),
                    Err(_) => return Err(self.type_error(format!("not a number: {}", quote_short(s)))),
                },
                Value::Null => return Err(null(self, 0, DeclaredType::Str)),
                _ => return Err(bad(self)),
            },
            Builtin::Hash => {
                let digest = Sha256::digest(vals[0].render().as_bytes());
                Value::Str(hex::encode(&digest[..8]))
            }
            Builtin::Date => match &vals[0] {
                Value::Int(ms) => Value::Str(format_date(*ms)),
                Value::Null => return Err(null(self, 0, DeclaredType::Int)),
                _ => return Err(bad(self)),
            },
            Builtin::Header => match (&vals[0], &vals[1]) {
                (Value::Str(k), v) if !v.is_null() => {
                    self.headers.push((k.clone(), v.render()));
                    Value::Null
                }
                (Value::Null, _) => return Err(null(self, 0, DeclaredType::Str)),
                (_, Value::Null) => return Err(null(self, 1, DeclaredType::Str)),
                _ => return Err(bad(self)),
            },
            Builtin::Contains => match (&vals[0], &vals[1]) {
                (Value::List(l), x) => Value::Bool(l.contains(x)),
                (Value::Str(s), Value::Str(x)) => Value::Bool(s.contains(x.as_str())),
                (Value::Record(r), Value::Str(k)) => Value::Bool(r.contains_key(k)),
                (Value::Null, _) => return Err(null(self, 0, DeclaredType::Any)),
                _ => return Err(bad(self)),
            },
            Builtin::Keys => match &vals[0] {
                Value::Record(r) => Value::List(r.keys().map(Value::str).collect()),
                Value::Null => return Err(null(self, 0, DeclaredType::Record)),
                _ => return Err(bad(self)),
            },
            Builtin::Push => match &vals[0] {
                Value::List(l) => {
                    let mut l = l.clone();
                    l.push(vals[1].clone());
                    Value::List(l)
                }
                Value::Null => return Err(null(self, 0, DeclaredType::List)),
                _ => return Err(bad(self)),
            },
            Builtin::Split => match (&vals[0], &vals[1]) {
                (Value::Str(s), Value::Str(sep)) if !sep.is_empty() => {
                    Value::List(s.split(sep.as_str()).map(Value::str).collect())
                }
                (Value::Null, _) => return Err(null(self, 0, DeclaredType::Str)),
                (_, Value::Null) => return Err(null(self, 1, DeclaredType::Str)),
                _ => return Err(bad(self)),
            },
            Builtin::Join => match (&vals[0], &vals[1]) {
                (Value::List(l), Value::Str(sep)) => Value::Str(
                    l.iter().map(Value::render).collect::<Vec<_>>().join(sep),
                ),
                (Value::Null, _) => return Err(null(self, 0, DeclaredType::List)),
                (_, Value::Null) => return Err(null(self, 1, DeclaredType::Str)),
                _ => return Err(bad(self)),
            },
        })
    }
}

fn quote_short(s: &str) -> String {
    let cut: String = s.chars().take(32).collect();
    crate::value::quote(&cut)
}

/// `YYYY-MM-DDTHH:MM:SS.mmmZ` in UTC.
fn format_date(ms: i64) -> String {
    let fmt = time::macros::format_description!(
        "[year]-[month]-[day]T[hour]:[minute]:[second].[subsecond digits:3]Z"
    );
    time::OffsetDateTime::from_unix_timestamp_nanos(ms as i128 * 1_000_000)
        .ok()
        .and_then(|t| t.format(&fmt).ok())
        .unwrap_or_else(|| "invalid-date".to_string())
}

enum PathError {
    /// Null found after `depth` accessors; the accessor needed this type.
    Null(usize, DeclaredType),
    Bounds(i64, usize),
    Type(String),
}

fn store_path(slot: &mut Value, keys: &[Key], v: Value) -> Result<(), PathError> {
    let mut cur = slot;
    for (depth, k) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        cur = match (cur, k) {
            (Value::Null, Key::Field(_) | Key::Index(Value::Str(_))) => {
                return Err(PathError::Null(depth, DeclaredType::Record))
            }
            (Value::Null, Key::Index(_)) => return Err(PathError::Null(depth, DeclaredType::List)),
            (Value::Record(m), Key::Field(f) | Key::Index(Value::Str(f))) => {
                if last {
                    m.insert(f.clone(), v);
                    return Ok(());
                }
                m.entry(f.clone()).or_insert(Value::Null)
            }
            (Value::List(l), Key::Index(Value::Int(i))) => {
                let n = l.len();
                if *i < 0 || *i as usize >= n {
                    return Err(PathError::Bounds(*i, n));
                }
                &mut l[*i as usize]
            }
            (c, _) => {
                return Err(PathError::Type(format!(
                    "cannot assign into {}",
                    c.kind_name()
                )))
            }
        };
        if last {
            *cur = v;
            return Ok(());
        }
    }
    unreachable!("keys is non-empty")
}

/// The expression naming the first `depth` steps of an assignment target.
fn prefix_expr(target: &LValue, depth: usize) -> Expr {
    let mut e = Expr {
        id: NodeId(u32::MAX),
        kind: ExprKind::Var(target.root.clone()),
    };
    for a in &target.path[..depth] {
        e = Expr {
            id: NodeId(u32::MAX),
            kind: match a {
                Accessor::Field(f) => ExprKind::Field(Box::new(e), f.clone()),
                Accessor::Index(i) => ExprKind::Index(Box::new(e), Box::new(i.clone())),
            },
        };
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn run(src: &str, path: &str) -> ExecutionResult {
        let p = parse(src).unwrap();
        let mut store = MemoryStore::default();
        execute(&p, &RequestEnvelope::new("r", "GET", path), &mut store, ExecLimits::default())
            .unwrap()
    }

    fn kind(src: &str) -> ExceptionKind {
        let body = format!("method main() {{ {src} }} routes {{ GET / -> main }}");
        run(&body, "/").failure().expect("should fail").kind
    }

    #[test]
    fn taxonomy() {
        assert_eq!(kind("let x = null; let y = x.a;"), ExceptionKind::NullDeref);
        assert_eq!(kind("let x = 1 / 0;"), ExceptionKind::DivByZero);
        assert_eq!(kind("let x = [1][3];"), ExceptionKind::IndexOutOfBounds);
        assert_eq!(kind("let x: int = \"s\";"), ExceptionKind::TypeError);
        assert_eq!(kind("throw \"boom\";"), ExceptionKind::ExplicitThrow);
        assert_eq!(kind("while (true) { }"), ExceptionKind::Timeout);
        assert_eq!(kind("let y = undefined_var;"), ExceptionKind::TypeError);
        assert_eq!(kind("respond(200, \"a\"); respond(200, \"b\");"), ExceptionKind::TypeError);
    }

    #[test]
    fn catch_handles_everything_but_timeout() {
        let r = run(
            "method main() { try { throw 1; } catch { respond(418, \"caught\"); } }
             routes { GET / -> main }",
            "/",
        );
        assert_eq!(r.response().unwrap().status, 418);
        let r = run(
            "method main() { try { while (true) {} } catch { respond(418, \"caught\"); } }
             routes { GET / -> main }",
            "/",
        );
        assert_eq!(r.failure().unwrap().kind, ExceptionKind::Timeout);
    }

    #[test]
    fn deep_recursion_is_a_timeout() {
        let r = run(
            "method f(n: int): int { return f(n + 1); } method main() { f(0); }
             routes { GET / -> main }",
            "/",
        );
        let f = r.failure().unwrap();
        assert_eq!(f.kind, ExceptionKind::Timeout);
        assert_eq!(f.stack.len(), ExecLimits::default().max_depth);
    }

    #[test]
    fn null_site_points_at_null_subexpression() {
        let src = "method main() { let c = {per_item: null}; let p = 10 + c.per_item * 2; }
                   routes { GET / -> main }";
        let p = parse(src).unwrap();
        let r = execute(
            &p,
            &RequestEnvelope::new("r", "GET", "/"),
            &mut MemoryStore::default(),
            ExecLimits::default(),
        )
        .unwrap();
        let f = r.failure().unwrap();
        let site = f.null_site.as_ref().unwrap();
        assert_eq!(crate::printer::print_expr(&site.expr), "c.per_item");
        assert_eq!(site.expected, DeclaredType::Int);
        let stmt = p.stmt_at(f.location).unwrap();
        assert!(stmt.find_expr(site.node.unwrap()).is_some());
        let vars: Vec<_> = f.innermost_scope().vars.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(vars, ["c"]);
    }

    #[test]
    fn value_semantics_and_nested_assignment() {
        let r = run(
            "method main() {
                 let a = {x: {y: 1}, l: [1, 2]};
                 let b = a;
                 b.x.y = 5;
                 b.l[1] = 9;
                 respond(200, str(a) + \"|\" + str(b));
             }
             routes { GET / -> main }",
            "/",
        );
        assert_eq!(
            r.response().unwrap().body_text(),
            "{l: [1, 2], x: {y: 1}}|{l: [1, 9], x: {y: 5}}"
        );
    }

    #[test]
    fn string_concat_renders_null() {
        let r = run(
            "method main() { respond(200, \"a\" + null); } routes { GET / -> main }",
            "/",
        );
        assert_eq!(r.response().unwrap().body_text(), "anull");
    }

    #[test]
    fn date_format() {
        assert_eq!(format_date(0), "1970-01-01T00:00:00.000Z");
        assert_eq!(format_date(1_700_000_000_123), "2023-11-14T22:13:20.123Z");
    }
}
