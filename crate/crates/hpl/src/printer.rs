//! Canonical source rendering. Diffs between programs are diffs of this output.

use crate::ast::*;
use crate::value::{is_identifier, quote};

const INDENT: &str = "    ";

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, m) in p.methods.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_method_into(m, &mut out);
    }
    if !p.routes.is_empty() {
        if !p.methods.is_empty() {
            out.push('\n');
        }
        out.push_str("routes {\n");
        for r in &p.routes {
            out.push_str(&format!("{INDENT}{} {} -> {}\n", r.verb, r.pattern, r.method));
        }
        out.push_str("}\n");
    }
    out
}

pub fn print_method(m: &Method) -> String {
    let mut out = String::new();
    print_method_into(m, &mut out);
    out
}

fn print_method_into(m: &Method, out: &mut String) {
    out.push_str("method ");
    out.push_str(&m.name);
    out.push('(');
    for (i, p) in m.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{}: {}", p.name, p.ty));
    }
    out.push(')');
    if let Some(t) = m.ret {
        out.push_str(&format!(": {t}"));
    }
    out.push_str(" {\n");
    print_body(&m.body, 1, out);
    out.push_str("}\n");
}

fn print_body(body: &Body, depth: usize, out: &mut String) {
    for b in &body.blocks {
        for s in &b.stmts {
            print_stmt(s, depth, out);
        }
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
}

/// Renders one statement at the given depth, including nested bodies.
pub fn print_stmt_at(s: &Stmt, depth: usize) -> String {
    let mut out = String::new();
    print_stmt(s, depth, &mut out);
    out
}

fn print_stmt(s: &Stmt, depth: usize, out: &mut String) {
    indent(depth, out);
    match &s.kind {
        StmtKind::Let { name, ty, value } => {
            out.push_str("let ");
            out.push_str(name);
            if let Some(t) = ty {
                out.push_str(&format!(": {t}"));
            }
            out.push_str(" = ");
            out.push_str(&print_expr(value));
            out.push_str(";\n");
        }
        StmtKind::Assign { target, value } => {
            out.push_str(&target.root);
            for a in &target.path {
                match a {
                    Accessor::Field(f) => {
                        out.push('.');
                        out.push_str(f);
                    }
                    Accessor::Index(e) => {
                        out.push('[');
                        out.push_str(&print_expr(e));
                        out.push(']');
                    }
                }
            }
            out.push_str(" = ");
            out.push_str(&print_expr(value));
            out.push_str(";\n");
        }
        StmtKind::If { cond, then, els } => {
            print_if(cond, then, els.as_ref(), depth, out);
            out.push('\n');
        }
        StmtKind::While { cond, body } => {
            out.push_str(&format!("while ({}) {{\n", print_expr(cond)));
            print_body(body, depth + 1, out);
            indent(depth, out);
            out.push_str("}\n");
        }
        StmtKind::Try { body, handler } => {
            out.push_str("try {\n");
            print_body(body, depth + 1, out);
            indent(depth, out);
            out.push_str("} catch {\n");
            print_body(handler, depth + 1, out);
            indent(depth, out);
            out.push_str("}\n");
        }
        StmtKind::Return(None) => out.push_str("return;\n"),
        StmtKind::Return(Some(e)) => out.push_str(&format!("return {};\n", print_expr(e))),
        StmtKind::Throw(e) => out.push_str(&format!("throw {};\n", print_expr(e))),
        StmtKind::Respond { status, body } => out.push_str(&format!(
            "respond({}, {});\n",
            print_expr(status),
            print_expr(body)
        )),
        StmtKind::Skip => out.push_str("// skipped\n"),
        StmtKind::Expr(e) => out.push_str(&format!("{};\n", print_expr(e))),
    }
}

fn print_if(cond: &Expr, then: &Body, els: Option<&Body>, depth: usize, out: &mut String) {
    out.push_str(&format!("if ({}) {{\n", print_expr(cond)));
    print_body(then, depth + 1, out);
    indent(depth, out);
    out.push('}');
    if let Some(els) = els {
        if let [only] = els.blocks.as_slice() {
            if let [Stmt {
                kind:
                    StmtKind::If {
                        cond,
                        then,
                        els: nested,
                    },
                ..
            }] = only.stmts.as_slice()
            {
                out.push_str(" else ");
                print_if(cond, then, nested.as_ref(), depth, out);
                return;
            }
        }
        out.push_str(" else {\n");
        print_body(els, depth + 1, out);
        indent(depth, out);
        out.push('}');
    }
}

const PREC_TERNARY: u8 = 0;
const PREC_UNARY: u8 = 7;
const PREC_POSTFIX: u8 = 8;

fn prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Ternary(..) => PREC_TERNARY,
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::Unary(..) => PREC_UNARY,
        ExprKind::Lit(crate::value::Value::Int(i)) if *i < 0 => PREC_UNARY,
        ExprKind::Field(..) | ExprKind::Index(..) => PREC_POSTFIX,
        _ => 9,
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, PREC_TERNARY, &mut out);
    out
}

fn write_expr(e: &Expr, min: u8, out: &mut String) {
    let wrap = prec(e) < min;
    if wrap {
        out.push('(');
    }
    match &e.kind {
        ExprKind::Lit(v) => out.push_str(&v.literal()),
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::RecordLit(fields) => {
            out.push('{');
            for (i, (k, v)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                if is_identifier(k) {
                    out.push_str(k);
                } else {
                    out.push_str(&quote(k));
                }
                out.push_str(": ");
                write_expr(v, PREC_TERNARY, out);
            }
            out.push('}');
        }
        ExprKind::ListLit(items) => {
            out.push('[');
            write_list(items, out);
            out.push(']');
        }
        ExprKind::Field(base, name) => {
            write_expr(base, PREC_POSTFIX, out);
            out.push('.');
            out.push_str(name);
        }
        ExprKind::Index(base, idx) => {
            write_expr(base, PREC_POSTFIX, out);
            out.push('[');
            write_expr(idx, PREC_TERNARY, out);
            out.push(']');
        }
        ExprKind::Unary(op, inner) => {
            out.push_str(match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            });
            // `- -1` must not lex as a single token sequence `--1`.
            if matches!(op, UnOp::Neg) && prec(inner) == PREC_UNARY {
                out.push('(');
                write_expr(inner, PREC_TERNARY, out);
                out.push(')');
            } else {
                write_expr(inner, PREC_UNARY, out);
            }
        }
        ExprKind::Binary(op, a, b) => {
            write_expr(a, op.precedence(), out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_expr(b, op.precedence() + 1, out);
        }
        ExprKind::Ternary(c, a, b) => {
            write_expr(c, 1, out);
            out.push_str(" ? ");
            write_expr(a, PREC_TERNARY, out);
            out.push_str(" : ");
            write_expr(b, PREC_TERNARY, out);
        }
        ExprKind::Call(name, args) => {
            out.push_str(name);
            out.push('(');
            write_list(args, out);
            out.push(')');
        }
        ExprKind::Builtin(b, args) => {
            out.push_str(b.name());
            out.push('(');
            write_list(args, out);
            out.push(')');
        }
        ExprKind::StoreGet(k) => {
            out.push_str("store.get(");
            write_expr(k, PREC_TERNARY, out);
            out.push(')');
        }
        ExprKind::StorePut(k, v) => {
            out.push_str("store.put(");
            write_expr(k, PREC_TERNARY, out);
            out.push_str(", ");
            write_expr(v, PREC_TERNARY, out);
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}

fn write_list(items: &[Expr], out: &mut String) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(item, PREC_TERNARY, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_expr};

    #[test]
    fn round_trip_is_stable() {
        let src = r#"
method total(items: list): int {
    let sum: int = 0;
    let i = 0;
    while (i < len(items)) {
        sum = sum + items[i].price * (items[i].qty - 1);
        i = i + 1;
    }
    if (sum > 100) {
        return sum;
    } else if (sum == 0) {
        return -1;
    } else {
        throw "small";
    }
}

method main(req: record) {
    let t = req.form.x == null ? 0 : total(store.get("cart"));
    try {
        respond(200, "total=" + str(t));
    } catch {
        return;
    }
}

routes {
    GET /total -> main
}
"#;
        let p = parse(src).unwrap();
        let printed = print_program(&p);
        let again = print_program(&parse(&printed).unwrap());
        assert_eq!(printed, again);
        assert_eq!(printed.trim(), src.trim());
    }

    #[test]
    fn parenthesization_preserves_structure() {
        for src in ["(1 + 2) * 3", "a - (b - c)", "-(-x)", "(c ? a : b).f", "!(a && b)"] {
            let e = parse_expr(src).unwrap();
            let printed = print_expr(&e);
            let reparsed = parse_expr(&printed).unwrap();
            assert_eq!(print_expr(&reparsed), printed, "{src}");
            assert_eq!(printed, src);
        }
    }
}
