//! Syntax tree for handler programs.
//!
//! Method bodies are sequences of basic blocks. A compound statement (`if`, `while`,
//! `try`) always terminates its block; the statements after it start a new block at
//! the join. Every block and every statement carries an `origin` block id. For a freshly
//! parsed program `origin == id`; edits that split, merge or synthesize blocks keep the
//! origin of the source text they came from, and coverage is recorded in origin ids, so
//! executions of edited programs stay comparable with executions of the original.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{DeclaredType, Value};

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(MethodId, "m");
id_type!(BlockId, "b");
id_type!(NodeId, "e");

/// A statement coordinate: the `index`-th statement of block `block` in method `method`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub method: MethodId,
    pub block: BlockId,
    pub index: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.method, self.block, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub methods: Vec<Method>,
    pub routes: Vec<Route>,
    pub version: u64,
    pub(crate) next_block: u32,
    pub(crate) next_node: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub verb: String,
    pub pattern: String,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub id: MethodId,
    pub name: String,
    pub params: Vec<Param>,
    /// `None` for void methods.
    pub ret: Option<DeclaredType>,
    pub body: Body,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: DeclaredType,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Body {
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub origin: BlockId,
    pub stmts: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub origin: BlockId,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtKind {
    Let {
        name: String,
        ty: Option<DeclaredType>,
        value: Expr,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    If {
        cond: Expr,
        then: Body,
        els: Option<Body>,
    },
    While {
        cond: Expr,
        body: Body,
    },
    Try {
        body: Body,
        handler: Body,
    },
    Return(Option<Expr>),
    Throw(Expr),
    Respond {
        status: Expr,
        body: Expr,
    },
    /// No-op left behind by a skip edit.
    Skip,
    Expr(Expr),
}

impl StmtKind {
    pub fn is_compound(&self) -> bool {
        matches!(
            self,
            StmtKind::If { .. } | StmtKind::While { .. } | StmtKind::Try { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LValue {
    pub root: String,
    pub path: Vec<Accessor>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accessor {
    Field(String),
    Index(Expr),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expr {
    pub id: NodeId,
    pub kind: ExprKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

/// Built-in functions. Names are reserved and cannot be declared as methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Builtin {
    Len,
    Str,
    Int,
    Hash,
    Date,
    Header,
    Contains,
    Keys,
    Push,
    Split,
    Join,
}

impl Builtin {
    pub const ALL: [Builtin; 11] = [
        Builtin::Len,
        Builtin::Str,
        Builtin::Int,
        Builtin::Hash,
        Builtin::Date,
        Builtin::Header,
        Builtin::Contains,
        Builtin::Keys,
        Builtin::Push,
        Builtin::Split,
        Builtin::Join,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Len => "len",
            Builtin::Str => "str",
            Builtin::Int => "int",
            Builtin::Hash => "hash",
            Builtin::Date => "date",
            Builtin::Header => "header",
            Builtin::Contains => "contains",
            Builtin::Keys => "keys",
            Builtin::Push => "push",
            Builtin::Split => "split",
            Builtin::Join => "join",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Len
            | Builtin::Str
            | Builtin::Int
            | Builtin::Hash
            | Builtin::Date
            | Builtin::Keys => 1,
            Builtin::Header
            | Builtin::Contains
            | Builtin::Push
            | Builtin::Split
            | Builtin::Join => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExprKind {
    Lit(Value),
    Var(String),
    RecordLit(Vec<(String, Expr)>),
    ListLit(Vec<Expr>),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Builtin(Builtin, Vec<Expr>),
    StoreGet(Box<Expr>),
    StorePut(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Direct sub-expressions in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Lit(_) | ExprKind::Var(_) => vec![],
            ExprKind::RecordLit(fields) => fields.iter().map(|(_, e)| e).collect(),
            ExprKind::ListLit(items) => items.iter().collect(),
            ExprKind::Field(e, _) | ExprKind::Unary(_, e) | ExprKind::StoreGet(e) => vec![e],
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) | ExprKind::StorePut(a, b) => {
                vec![a, b]
            }
            ExprKind::Ternary(a, b, c) => vec![a, b, c],
            ExprKind::Call(_, args) | ExprKind::Builtin(_, args) => args.iter().collect(),
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            ExprKind::Lit(_) | ExprKind::Var(_) => vec![],
            ExprKind::RecordLit(fields) => fields.iter_mut().map(|(_, e)| e).collect(),
            ExprKind::ListLit(items) => items.iter_mut().collect(),
            ExprKind::Field(e, _) | ExprKind::Unary(_, e) | ExprKind::StoreGet(e) => vec![e],
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) | ExprKind::StorePut(a, b) => {
                vec![a, b]
            }
            ExprKind::Ternary(a, b, c) => vec![a, b, c],
            ExprKind::Call(_, args) | ExprKind::Builtin(_, args) => args.iter_mut().collect(),
        }
    }

    /// Pre-order search for the node with `id`.
    pub fn find(&self, id: NodeId) -> Option<&Expr> {
        if self.id == id {
            return Some(self);
        }
        self.children().into_iter().find_map(|c| c.find(id))
    }

    pub fn find_mut(&mut self, id: NodeId) -> Option<&mut Expr> {
        if self.id == id {
            return Some(self);
        }
        self.children_mut().into_iter().find_map(|c| c.find_mut(id))
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        for c in self.children_mut() {
            c.visit_mut(f);
        }
    }
}

impl Stmt {
    /// Expressions owned directly by this statement (not by nested bodies).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Let { value, .. } => vec![value],
            StmtKind::Assign { target, value } => {
                let mut v: Vec<&Expr> = target
                    .path
                    .iter()
                    .filter_map(|a| match a {
                        Accessor::Index(e) => Some(e),
                        Accessor::Field(_) => None,
                    })
                    .collect();
                v.push(value);
                v
            }
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::Return(e) => e.iter().collect(),
            StmtKind::Throw(e) | StmtKind::Expr(e) => vec![e],
            StmtKind::Respond { status, body } => vec![status, body],
            StmtKind::Try { .. } | StmtKind::Skip => vec![],
        }
    }

    pub fn exprs_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            StmtKind::Let { value, .. } => vec![value],
            StmtKind::Assign { target, value } => {
                let mut v: Vec<&mut Expr> = target
                    .path
                    .iter_mut()
                    .filter_map(|a| match a {
                        Accessor::Index(e) => Some(e),
                        Accessor::Field(_) => None,
                    })
                    .collect();
                v.push(value);
                v
            }
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::Return(e) => e.iter_mut().collect(),
            StmtKind::Throw(e) | StmtKind::Expr(e) => vec![e],
            StmtKind::Respond { status, body } => vec![status, body],
            StmtKind::Try { .. } | StmtKind::Skip => vec![],
        }
    }

    pub fn bodies(&self) -> Vec<&Body> {
        match &self.kind {
            StmtKind::If { then, els, .. } => {
                let mut v = vec![then];
                v.extend(els.iter());
                v
            }
            StmtKind::While { body, .. } => vec![body],
            StmtKind::Try { body, handler } => vec![body, handler],
            _ => vec![],
        }
    }

    pub fn bodies_mut(&mut self) -> Vec<&mut Body> {
        match &mut self.kind {
            StmtKind::If { then, els, .. } => {
                let mut v = vec![then];
                v.extend(els.iter_mut());
                v
            }
            StmtKind::While { body, .. } => vec![body],
            StmtKind::Try { body, handler } => vec![body, handler],
            _ => vec![],
        }
    }

    pub fn find_expr(&self, id: NodeId) -> Option<&Expr> {
        self.exprs().into_iter().find_map(|e| e.find(id))
    }
}

impl Body {
    pub fn empty(id: BlockId) -> Self {
        Body {
            blocks: vec![Block {
                id,
                origin: id,
                stmts: Vec::new(),
            }],
        }
    }

    /// Every block in this body and all nested bodies, pre-order.
    pub fn all_blocks(&self) -> Vec<&Block> {
        let mut out = Vec::new();
        self.collect_blocks(&mut out);
        out
    }

    fn collect_blocks<'a>(&'a self, out: &mut Vec<&'a Block>) {
        for b in &self.blocks {
            out.push(b);
            for s in &b.stmts {
                for nested in s.bodies() {
                    nested.collect_blocks(out);
                }
            }
        }
    }

    pub fn find_block(&self, id: BlockId) -> Option<&Block> {
        self.all_blocks().into_iter().find(|b| b.id == id)
    }

    pub fn find_block_mut(&mut self, id: BlockId) -> Option<&mut Block> {
        for b in &mut self.blocks {
            if b.id == id {
                return Some(b);
            }
            for s in &mut b.stmts {
                for nested in s.bodies_mut() {
                    if let Some(found) = nested.find_block_mut(id) {
                        return Some(found);
                    }
                }
            }
        }
        None
    }

    pub fn visit_stmts(&self, f: &mut impl FnMut(&Block, usize, &Stmt)) {
        for b in &self.blocks {
            for (i, s) in b.stmts.iter().enumerate() {
                f(b, i, s);
                for nested in s.bodies() {
                    nested.visit_stmts(f);
                }
            }
        }
    }

    pub fn visit_stmts_mut(&mut self, f: &mut impl FnMut(&mut Stmt)) {
        for b in &mut self.blocks {
            for s in &mut b.stmts {
                f(s);
                for nested in s.bodies_mut() {
                    nested.visit_stmts_mut(f);
                }
            }
        }
    }
}

impl Method {
    pub fn is_void(&self) -> bool {
        self.ret.is_none()
    }
}

/// Fresh-id source for edits that synthesize new blocks or expression nodes.
#[derive(Debug)]
pub struct IdAlloc<'a> {
    next_block: &'a mut u32,
    next_node: &'a mut u32,
}

impl IdAlloc<'_> {
    pub fn block(&mut self) -> BlockId {
        let id = BlockId(*self.next_block);
        *self.next_block += 1;
        id
    }

    pub fn node(&mut self) -> NodeId {
        let id = NodeId(*self.next_node);
        *self.next_node += 1;
        id
    }

    pub fn expr(&mut self, kind: ExprKind) -> Expr {
        Expr {
            id: self.node(),
            kind,
        }
    }

    /// Gives every node in `e` a fresh id.
    pub fn renumber_expr(&mut self, e: &mut Expr) {
        e.visit_mut(&mut |x| x.id = self.node());
    }

    /// Deep copy of a statement with fresh block and node ids. Block and statement
    /// origins are set to the fresh ids, marking the copy as synthesized code.
    pub fn synthesize_stmt(&mut self, stmt: &Stmt, origin: BlockId) -> Stmt {
        let mut copy = stmt.clone();
        copy.origin = origin;
        for e in copy.exprs_mut() {
            self.renumber_expr(e);
        }
        for body in copy.bodies_mut() {
            self.synthesize_body(body);
        }
        copy
    }

    fn synthesize_body(&mut self, body: &mut Body) {
        for b in &mut body.blocks {
            let fresh = self.block();
            b.id = fresh;
            b.origin = fresh;
            let stmts = std::mem::take(&mut b.stmts);
            b.stmts = stmts
                .iter()
                .map(|s| self.synthesize_stmt(s, fresh))
                .collect();
        }
    }

    /// A single-block body of synthesized statements.
    pub fn synthetic_body(&mut self, stmts: Vec<StmtKind>) -> Body {
        let id = self.block();
        Body {
            blocks: vec![Block {
                id,
                origin: id,
                stmts: stmts
                    .into_iter()
                    .map(|kind| Stmt { origin: id, kind })
                    .collect(),
            }],
        }
    }

    /// Re-establishes the block discipline after an edit: compound statements end their
    /// block, non-terminated blocks merge with their successor, and empty blocks vanish
    /// unless the body would become empty. Split-off blocks get fresh ids but keep the
    /// origin of the block they were carved from.
    pub fn normalize(&mut self, body: &mut Body) {
        let blocks = std::mem::take(&mut body.blocks);
        let fallback = blocks.first().map(|b| (b.id, b.origin));
        let mut used = BTreeSet::new();
        let mut out: Vec<Block> = Vec::new();
        let mut open = false;
        for Block { id, origin, stmts } in blocks {
            for mut s in stmts {
                for nested in s.bodies_mut() {
                    self.normalize(nested);
                }
                if !open {
                    let bid = if used.insert(id) { id } else { self.block() };
                    out.push(Block {
                        id: bid,
                        origin,
                        stmts: Vec::new(),
                    });
                }
                open = !s.kind.is_compound();
                out.last_mut().expect("block open").stmts.push(s);
            }
        }
        if out.is_empty() {
            let (id, origin) = fallback.unwrap_or_else(|| {
                let b = self.block();
                (b, b)
            });
            out.push(Block {
                id,
                origin,
                stmts: Vec::new(),
            });
        }
        body.blocks = out;
    }
}

fn ends_with_compound(b: &Block) -> bool {
    b.stmts.last().is_some_and(|s| s.kind.is_compound())
}

impl Program {
    pub fn method(&self, id: MethodId) -> Option<&Method> {
        self.methods.get(id.0 as usize)
    }

    pub fn method_by_name(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn method_mut(&mut self, id: MethodId) -> Option<&mut Method> {
        self.methods.get_mut(id.0 as usize)
    }

    /// Splits borrows so an edit can mutate one method while allocating fresh ids.
    pub fn edit_method(&mut self, id: MethodId) -> Option<(&mut Method, IdAlloc<'_>)> {
        let Program {
            methods,
            next_block,
            next_node,
            ..
        } = self;
        let m = methods.get_mut(id.0 as usize)?;
        Some((
            m,
            IdAlloc {
                next_block,
                next_node,
            },
        ))
    }

    /// The fresh-id counters `(next_block, next_node)`.
    pub fn id_counters(&self) -> (u32, u32) {
        (self.next_block, self.next_node)
    }

    /// Puts back a method and the id counters saved before an edit.
    pub fn restore_method(&mut self, method: Method, counters: (u32, u32)) {
        let slot = self
            .methods
            .get_mut(method.id.0 as usize)
            .expect("restored method exists");
        *slot = method;
        self.next_block = counters.0;
        self.next_node = counters.1;
    }

    pub fn id_alloc(&mut self) -> IdAlloc<'_> {
        IdAlloc {
            next_block: &mut self.next_block,
            next_node: &mut self.next_node,
        }
    }

    pub fn stmt_at(&self, loc: Location) -> Option<&Stmt> {
        self.method(loc.method)?
            .body
            .find_block(loc.block)?
            .stmts
            .get(loc.index)
    }

    pub fn block_count(&self) -> usize {
        self.methods
            .iter()
            .map(|m| m.body.all_blocks().len())
            .sum()
    }

    /// Block ids coverage may legitimately report: every block and statement origin.
    pub fn declared_blocks(&self) -> BTreeSet<BlockId> {
        let mut out = BTreeSet::new();
        for m in &self.methods {
            for b in m.body.all_blocks() {
                out.insert(b.origin);
                for s in &b.stmts {
                    out.insert(s.origin);
                }
            }
        }
        out
    }

    /// Checks structural invariants: unique method names, method ids equal positions,
    /// routes and calls resolve, block ids unique, block discipline respected.
    pub fn validate(&self) -> Result<(), String> {
        let mut names = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            if m.id.0 as usize != i {
                return Err(format!("method {} has id {} at position {i}", m.name, m.id));
            }
            if !names.insert(m.name.as_str()) {
                return Err(format!("duplicate method {}", m.name));
            }
        }
        for r in &self.routes {
            if !names.contains(r.method.as_str()) {
                return Err(format!("route {} {} targets unknown {}", r.verb, r.pattern, r.method));
            }
        }
        let mut blocks = BTreeSet::new();
        for m in &self.methods {
            for b in m.body.all_blocks() {
                if !blocks.insert(b.id) {
                    return Err(format!("duplicate block id {}", b.id));
                }
                if b.id.0 >= self.next_block {
                    return Err(format!("block id {} beyond allocator", b.id));
                }
            }
            check_discipline(&m.body).map_err(|e| format!("{}: {e}", m.name))?;
            let mut err = None;
            m.body.visit_stmts(&mut |_, _, s| {
                for e in s.exprs() {
                    e.visit(&mut |x| {
                        if let ExprKind::Call(name, _) = &x.kind {
                            if !names.contains(name.as_str()) && err.is_none() {
                                err = Some(format!("call to unknown method {name}"));
                            }
                        }
                    });
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(())
    }
}

fn check_discipline(body: &Body) -> Result<(), String> {
    if body.blocks.is_empty() {
        return Err("empty body".into());
    }
    let n = body.blocks.len();
    for (i, b) in body.blocks.iter().enumerate() {
        for (j, s) in b.stmts.iter().enumerate() {
            if s.kind.is_compound() && j + 1 != b.stmts.len() {
                return Err(format!("compound statement inside block {}", b.id));
            }
            for nested in s.bodies() {
                check_discipline(nested)?;
            }
        }
        if i + 1 < n && !ends_with_compound(b) {
            return Err(format!("block {} ends without a join", b.id));
        }
    }
    Ok(())
}
