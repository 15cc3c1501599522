//! A small imperative language for HTTP request handlers, with an instrumented
//! interpreter that reports block coverage and structured failures.

pub mod ast;
pub mod envelope;
pub mod error;
pub mod interp;
mod lexer;
pub mod parser;
pub mod printer;
pub mod value;

pub use ast::{
    Accessor, BinOp, Block, BlockId, Body, Builtin, Expr, ExprKind, IdAlloc, LValue, Location,
    Method, MethodId, NodeId, Param, Program, Route, Stmt, StmtKind, UnOp,
};
pub use envelope::{request_record, ExceptionMeta, RequestEnvelope, ResponseEnvelope, RouteMatch};
pub use error::{ParseError, Pos};
pub use interp::{
    execute, CoverageTrace, ExceptionKind, ExecError, ExecLimits, ExecutionResult, Failure,
    FrameScope, MemoryStore, NullSite, Outcome, SandboxViolation, ScopeVar, StoreAccess,
    StoreWrite,
};
pub use parser::{parse, parse_expr, parse_method, parse_value};
pub use printer::{print_expr, print_method, print_program, print_stmt_at};
pub use value::{DeclaredType, Value};
