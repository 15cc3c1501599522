use std::collections::BTreeMap;

use crate::ast::*;
use crate::error::{ParseError, Pos};
use crate::lexer::{is_keyword, Lexer, Tok};
use crate::value::{DeclaredType, Value};

const VERBS: &[&str] = &["GET", "POST", "PUT", "DELETE", "PATCH"];

/// Parses a `.hpl` source file.
pub fn parse(source: &str) -> Result<Program, ParseError> {
    let mut p = Parser {
        lx: Lexer::new(source),
        next_block: 0,
        next_node: 0,
        calls: Vec::new(),
    };
    let mut methods: Vec<Method> = Vec::new();
    let mut method_pos: BTreeMap<String, Pos> = BTreeMap::new();
    let mut routes: Vec<(Route, Pos)> = Vec::new();
    loop {
        let (tok, pos) = p.lx.next()?;
        match tok {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "method" => {
                let m = p.method(MethodId(methods.len() as u32))?;
                if method_pos.contains_key(&m.name) {
                    return Err(ParseError::DuplicateMethod { name: m.name, pos });
                }
                method_pos.insert(m.name.clone(), pos);
                methods.push(m);
            }
            Tok::Ident(kw) if kw == "routes" => p.routes(&mut routes)?,
            other => {
                return Err(ParseError::syntax(
                    pos,
                    format!("expected `method` or `routes`, found {}", describe(&other)),
                ))
            }
        }
    }
    for (name, pos) in &p.calls {
        if !method_pos.contains_key(name) {
            return Err(ParseError::UnknownCallTarget {
                name: name.clone(),
                pos: *pos,
            });
        }
    }
    for (r, pos) in &routes {
        if !method_pos.contains_key(&r.method) {
            return Err(ParseError::UnknownRouteTarget {
                route: format!("{} {}", r.verb, r.pattern),
                name: r.method.clone(),
                pos: *pos,
            });
        }
    }
    Ok(Program {
        methods,
        routes: routes.into_iter().map(|(r, _)| r).collect(),
        version: 0,
        next_block: p.next_block,
        next_node: p.next_node,
    })
}

/// Parses one method declaration against an existing program: calls may target any of
/// the program's methods, and block and node ids are drawn from the program's counters so
/// they are fresh within it. The method gets the id of the same-named method if there is
/// one, else the next free id. The program's methods are not modified.
pub fn parse_method(source: &str, program: &mut Program) -> Result<Method, ParseError> {
    let mut p = Parser {
        lx: Lexer::new(source),
        next_block: program.next_block,
        next_node: program.next_node,
        calls: Vec::new(),
    };
    let (tok, pos) = p.lx.next()?;
    if tok != Tok::Ident("method".into()) {
        return Err(ParseError::syntax(
            pos,
            format!("expected `method`, found {}", describe(&tok)),
        ));
    }
    let id = MethodId(program.methods.len() as u32);
    let mut m = p.method(id)?;
    let (tok, pos) = p.lx.next()?;
    if tok != Tok::Eof {
        return Err(ParseError::syntax(pos, format!("trailing {}", describe(&tok))));
    }
    for (name, pos) in &p.calls {
        if name != &m.name && program.method_by_name(name).is_none() {
            return Err(ParseError::UnknownCallTarget {
                name: name.clone(),
                pos: *pos,
            });
        }
    }
    if let Some(existing) = program.method_by_name(&m.name) {
        m.id = existing.id;
    }
    program.next_block = p.next_block;
    program.next_node = p.next_node;
    Ok(m)
}

/// Parses a single expression, e.g. a patch payload. Node ids start at zero; callers
/// splicing the result into a program must renumber it.
pub fn parse_expr(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        lx: Lexer::new(source),
        next_block: 0,
        next_node: 0,
        calls: Vec::new(),
    };
    let e = p.expr()?;
    let (tok, pos) = p.lx.next()?;
    if tok != Tok::Eof {
        return Err(ParseError::syntax(pos, format!("trailing {}", describe(&tok))));
    }
    Ok(e)
}

/// Parses a literal value (no variables, calls or operators other than unary minus).
pub fn parse_value(source: &str) -> Result<Value, ParseError> {
    let e = parse_expr(source)?;
    literal_value(&e).ok_or_else(|| {
        ParseError::syntax(Pos { line: 1, col: 1 }, "expected a literal value")
    })
}

fn literal_value(e: &Expr) -> Option<Value> {
    Some(match &e.kind {
        ExprKind::Lit(v) => v.clone(),
        ExprKind::Unary(UnOp::Neg, inner) => match literal_value(inner)? {
            Value::Int(i) => Value::Int(i.wrapping_neg()),
            _ => return None,
        },
        ExprKind::ListLit(items) => {
            Value::List(items.iter().map(literal_value).collect::<Option<_>>()?)
        }
        ExprKind::RecordLit(fields) => Value::Record(
            fields
                .iter()
                .map(|(k, v)| Some((k.clone(), literal_value(v)?)))
                .collect::<Option<_>>()?,
        ),
        _ => return None,
    })
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(i) => format!("integer {i}"),
        Tok::Str(_) => "string literal".into(),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}

struct Parser<'a> {
    lx: Lexer<'a>,
    next_block: u32,
    next_node: u32,
    calls: Vec<(String, Pos)>,
}

impl Parser<'_> {
    fn block_id(&mut self) -> BlockId {
        let id = BlockId(self.next_block);
        self.next_block += 1;
        id
    }

    fn node(&mut self, kind: ExprKind) -> Expr {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        Expr { id, kind }
    }

    fn expect(&mut self, p: &'static str) -> Result<Pos, ParseError> {
        let (tok, pos) = self.lx.next()?;
        if tok == Tok::Punct(p) {
            Ok(pos)
        } else {
            Err(ParseError::syntax(
                pos,
                format!("expected `{p}`, found {}", describe(&tok)),
            ))
        }
    }

    fn eat(&mut self, p: &'static str) -> Result<bool, ParseError> {
        if self.lx.peek()?.0 == Tok::Punct(p) {
            self.lx.next()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn peek_keyword(&mut self, kw: &str) -> Result<bool, ParseError> {
        Ok(matches!(&self.lx.peek()?.0, Tok::Ident(s) if s == kw))
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        let (tok, pos) = self.lx.next()?;
        match tok {
            Tok::Ident(s) if !is_keyword(&s) => Ok((s, pos)),
            other => Err(ParseError::syntax(
                pos,
                format!("expected identifier, found {}", describe(&other)),
            )),
        }
    }

    fn ty(&mut self) -> Result<DeclaredType, ParseError> {
        let (tok, pos) = self.lx.next()?;
        match &tok {
            Tok::Ident(s) => DeclaredType::from_keyword(s)
                .ok_or_else(|| ParseError::syntax(pos, format!("unknown type `{s}`"))),
            other => Err(ParseError::syntax(
                pos,
                format!("expected type, found {}", describe(other)),
            )),
        }
    }

    fn method(&mut self, id: MethodId) -> Result<Method, ParseError> {
        let (name, pos) = self.ident()?;
        if Builtin::from_name(&name).is_some() {
            return Err(ParseError::syntax(
                pos,
                format!("`{name}` is a built-in function"),
            ));
        }
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.eat(")")? {
            loop {
                let (pname, ppos) = self.ident()?;
                if params.iter().any(|p: &Param| p.name == pname) {
                    return Err(ParseError::syntax(ppos, format!("duplicate parameter `{pname}`")));
                }
                self.expect(":")?;
                let ty = self.ty()?;
                params.push(Param { name: pname, ty });
                if self.eat(")")? {
                    break;
                }
                self.expect(",")?;
            }
        }
        let ret = if self.eat(":")? {
            if self.peek_keyword("void")? {
                self.lx.next()?;
                None
            } else {
                Some(self.ty()?)
            }
        } else {
            None
        };
        let body = self.body()?;
        Ok(Method {
            id,
            name,
            params,
            ret,
            body,
        })
    }

    fn routes(&mut self, out: &mut Vec<(Route, Pos)>) -> Result<(), ParseError> {
        self.expect("{")?;
        loop {
            let (tok, pos) = self.lx.next()?;
            match tok {
                Tok::Punct("}") => return Ok(()),
                Tok::Ident(verb) if VERBS.contains(&verb.as_str()) => {
                    let (pattern, ppos) = self.lx.path()?;
                    if out
                        .iter()
                        .any(|(r, _)| r.verb == verb && r.pattern == pattern)
                    {
                        return Err(ParseError::syntax(
                            ppos,
                            format!("duplicate route {verb} {pattern}"),
                        ));
                    }
                    self.expect("->")?;
                    let (method, _) = self.ident()?;
                    out.push((
                        Route {
                            verb,
                            pattern,
                            method,
                        },
                        pos,
                    ));
                }
                other => {
                    return Err(ParseError::syntax(
                        pos,
                        format!("expected HTTP verb or `}}`, found {}", describe(&other)),
                    ))
                }
            }
        }
    }

    fn body(&mut self) -> Result<Body, ParseError> {
        self.expect("{")?;
        let first = self.block_id();
        let mut blocks = vec![Block {
            id: first,
            origin: first,
            stmts: Vec::new(),
        }];
        let mut needs_new = false;
        while !self.eat("}")? {
            if self.lx.peek()?.0 == Tok::Eof {
                let pos = self.lx.peek()?.1;
                return Err(ParseError::syntax(pos, "unexpected end of input in block"));
            }
            if needs_new {
                let id = self.block_id();
                blocks.push(Block {
                    id,
                    origin: id,
                    stmts: Vec::new(),
                });
            }
            let current = blocks.last().expect("block").id;
            let kind = self.stmt()?;
            needs_new = kind.is_compound();
            blocks
                .last_mut()
                .expect("block")
                .stmts
                .push(Stmt {
                    origin: current,
                    kind,
                });
        }
        Ok(Body { blocks })
    }

    fn stmt(&mut self) -> Result<StmtKind, ParseError> {
        let (tok, pos) = self.lx.peek()?.clone();
        if let Tok::Ident(kw) = &tok {
            match kw.as_str() {
                "let" => {
                    self.lx.next()?;
                    let (name, _) = self.ident()?;
                    let ty = if self.eat(":")? { Some(self.ty()?) } else { None };
                    self.expect("=")?;
                    let value = self.expr()?;
                    self.expect(";")?;
                    return Ok(StmtKind::Let { name, ty, value });
                }
                "if" => {
                    self.lx.next()?;
                    return self.if_rest();
                }
                "while" => {
                    self.lx.next()?;
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    let body = self.body()?;
                    return Ok(StmtKind::While { cond, body });
                }
                "try" => {
                    self.lx.next()?;
                    let body = self.body()?;
                    if !self.peek_keyword("catch")? {
                        let pos = self.lx.peek()?.1;
                        return Err(ParseError::syntax(pos, "expected `catch`"));
                    }
                    self.lx.next()?;
                    let handler = self.body()?;
                    return Ok(StmtKind::Try { body, handler });
                }
                "return" => {
                    self.lx.next()?;
                    if self.eat(";")? {
                        return Ok(StmtKind::Return(None));
                    }
                    let e = self.expr()?;
                    self.expect(";")?;
                    return Ok(StmtKind::Return(Some(e)));
                }
                "throw" => {
                    self.lx.next()?;
                    let e = self.expr()?;
                    self.expect(";")?;
                    return Ok(StmtKind::Throw(e));
                }
                "respond" => {
                    self.lx.next()?;
                    self.expect("(")?;
                    let status = self.expr()?;
                    self.expect(",")?;
                    let body = self.expr()?;
                    self.expect(")")?;
                    self.expect(";")?;
                    return Ok(StmtKind::Respond { status, body });
                }
                "skip" => {
                    self.lx.next()?;
                    self.expect(";")?;
                    return Ok(StmtKind::Skip);
                }
                _ => {}
            }
        }
        let e = self.expr()?;
        if self.eat("=")? {
            let target = to_lvalue(e).ok_or_else(|| {
                ParseError::syntax(pos, "left side of assignment is not assignable")
            })?;
            let value = self.expr()?;
            self.expect(";")?;
            return Ok(StmtKind::Assign { target, value });
        }
        self.expect(";")?;
        Ok(StmtKind::Expr(e))
    }

    fn if_rest(&mut self) -> Result<StmtKind, ParseError> {
        self.expect("(")?;
        let cond = self.expr()?;
        self.expect(")")?;
        let then = self.body()?;
        let els = if self.peek_keyword("else")? {
            self.lx.next()?;
            if self.peek_keyword("if")? {
                self.lx.next()?;
                let id = self.block_id();
                let nested = self.if_rest()?;
                Some(Body {
                    blocks: vec![Block {
                        id,
                        origin: id,
                        stmts: vec![Stmt {
                            origin: id,
                            kind: nested,
                        }],
                    }],
                })
            } else {
                Some(self.body()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If { cond, then, els })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        let cond = self.binary(1)?;
        if self.eat("?")? {
            let a = self.expr()?;
            self.expect(":")?;
            let b = self.expr()?;
            return Ok(self.node(ExprKind::Ternary(
                Box::new(cond),
                Box::new(a),
                Box::new(b),
            )));
        }
        Ok(cond)
    }

    fn binop(&mut self) -> Result<Option<BinOp>, ParseError> {
        Ok(match self.lx.peek()?.0 {
            Tok::Punct(p) => match p {
                "+" => Some(BinOp::Add),
                "-" => Some(BinOp::Sub),
                "*" => Some(BinOp::Mul),
                "/" => Some(BinOp::Div),
                "%" => Some(BinOp::Rem),
                "==" => Some(BinOp::Eq),
                "!=" => Some(BinOp::Ne),
                "<" => Some(BinOp::Lt),
                "<=" => Some(BinOp::Le),
                ">" => Some(BinOp::Gt),
                ">=" => Some(BinOp::Ge),
                "&&" => Some(BinOp::And),
                "||" => Some(BinOp::Or),
                _ => None,
            },
            _ => None,
        })
    }

    /// Precedence climbing; all binary operators are left-associative.
    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop()? {
            if op.precedence() < min_prec {
                break;
            }
            self.lx.next()?;
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = self.node(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("!")? {
            let e = self.unary()?;
            return Ok(self.node(ExprKind::Unary(UnOp::Not, Box::new(e))));
        }
        if self.eat("-")? {
            if let Tok::Int(_) = self.lx.peek()?.0 {
                let (Tok::Int(n), _) = self.lx.next()? else {
                    unreachable!()
                };
                let lit = self.node(ExprKind::Lit(Value::Int(n.wrapping_neg())));
                return self.postfix(lit);
            }
            let e = self.unary()?;
            return Ok(self.node(ExprKind::Unary(UnOp::Neg, Box::new(e))));
        }
        let p = self.primary()?;
        self.postfix(p)
    }

    fn postfix(&mut self, mut e: Expr) -> Result<Expr, ParseError> {
        loop {
            if self.eat(".")? {
                let (name, _) = self.ident()?;
                e = self.node(ExprKind::Field(Box::new(e), name));
            } else if self.eat("[")? {
                let idx = self.expr()?;
                self.expect("]")?;
                e = self.node(ExprKind::Index(Box::new(e), Box::new(idx)));
            } else {
                return Ok(e);
            }
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if self.eat(")")? {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(")")? {
                return Ok(args);
            }
            self.expect(",")?;
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.lx.next()?;
        let kind = match tok {
            Tok::Int(n) => ExprKind::Lit(Value::Int(n)),
            Tok::Str(s) => ExprKind::Lit(Value::Str(s)),
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                return Ok(e);
            }
            Tok::Punct("[") => {
                let mut items = Vec::new();
                if !self.eat("]")? {
                    loop {
                        items.push(self.expr()?);
                        if self.eat("]")? {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                ExprKind::ListLit(items)
            }
            Tok::Punct("{") => {
                let mut fields: Vec<(String, Expr)> = Vec::new();
                if !self.eat("}")? {
                    loop {
                        let (key, kpos) = match self.lx.next()? {
                            (Tok::Ident(s), p) => (s, p),
                            (Tok::Str(s), p) => (s, p),
                            (other, p) => {
                                return Err(ParseError::syntax(
                                    p,
                                    format!("expected field name, found {}", describe(&other)),
                                ))
                            }
                        };
                        if fields.iter().any(|(k, _)| *k == key) {
                            return Err(ParseError::syntax(kpos, format!("duplicate field `{key}`")));
                        }
                        self.expect(":")?;
                        let v = self.expr()?;
                        fields.push((key, v));
                        if self.eat("}")? {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                ExprKind::RecordLit(fields)
            }
            Tok::Ident(name) => match name.as_str() {
                "null" => ExprKind::Lit(Value::Null),
                "true" => ExprKind::Lit(Value::Bool(true)),
                "false" => ExprKind::Lit(Value::Bool(false)),
                "store" => {
                    self.expect(".")?;
                    let (op, opos) = self.ident()?;
                    self.expect("(")?;
                    let mut args = self.args()?;
                    match (op.as_str(), args.len()) {
                        ("get", 1) => ExprKind::StoreGet(Box::new(args.remove(0))),
                        ("put", 2) => {
                            let v = args.remove(1);
                            ExprKind::StorePut(Box::new(args.remove(0)), Box::new(v))
                        }
                        _ => {
                            return Err(ParseError::syntax(
                                opos,
                                format!("unknown store operation `{op}` with {} arguments", args.len()),
                            ))
                        }
                    }
                }
                _ if is_keyword(&name) => {
                    return Err(ParseError::syntax(pos, format!("unexpected keyword `{name}`")))
                }
                _ => {
                    if self.eat("(")? {
                        let args = self.args()?;
                        if let Some(b) = Builtin::from_name(&name) {
                            if args.len() != b.arity() {
                                return Err(ParseError::syntax(
                                    pos,
                                    format!(
                                        "`{name}` takes {} arguments, {} given",
                                        b.arity(),
                                        args.len()
                                    ),
                                ));
                            }
                            ExprKind::Builtin(b, args)
                        } else {
                            self.calls.push((name.clone(), pos));
                            ExprKind::Call(name, args)
                        }
                    } else {
                        ExprKind::Var(name)
                    }
                }
            },
            other => {
                return Err(ParseError::syntax(
                    pos,
                    format!("expected expression, found {}", describe(&other)),
                ))
            }
        };
        Ok(self.node(kind))
    }
}

fn to_lvalue(e: Expr) -> Option<LValue> {
    match e.kind {
        ExprKind::Var(root) => Some(LValue {
            root,
            path: Vec::new(),
        }),
        ExprKind::Field(base, name) => {
            let mut lv = to_lvalue(*base)?;
            lv.path.push(Accessor::Field(name));
            Some(lv)
        }
        ExprKind::Index(base, idx) => {
            let mut lv = to_lvalue(*base)?;
            lv.path.push(Accessor::Index(*idx));
            Some(lv)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse(
            r#"method hello() { respond(200, "hi"); }
               routes { GET /hello -> hello }"#,
        )
        .unwrap();
        assert_eq!(p.methods.len(), 1);
        assert_eq!(p.block_count(), 1);
        assert_eq!(p.routes[0].pattern, "/hello");
        p.validate().unwrap();
    }

    #[test]
    fn unknown_call_target() {
        let err = parse("method a() { b(); }").unwrap_err();
        assert!(matches!(err, ParseError::UnknownCallTarget { ref name, .. } if name == "b"));
    }

    #[test]
    fn duplicate_method() {
        let err = parse("method a() { }\nmethod a() { }").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateMethod { .. }));
        assert_eq!(err.pos().line, 2);
    }

    #[test]
    fn unknown_route_target() {
        let err = parse("method a() { } routes { GET /x -> b }").unwrap_err();
        assert!(matches!(err, ParseError::UnknownRouteTarget { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse("method a() {\n  let x = ;\n}").unwrap_err();
        match err {
            ParseError::Syntax { pos, .. } => assert_eq!((pos.line, pos.col), (2, 11)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blocks_split_at_joins() {
        let p = parse(
            "method a(x: int): int {
                let y = 1;
                if (x > 0) { y = 2; } else { y = 3; }
                while (y > 0) { y = y - 1; }
                return y;
            }",
        )
        .unwrap();
        let body = &p.methods[0].body;
        // [let, if] [while] [return] at top level; then, else, loop body nested.
        assert_eq!(body.blocks.len(), 3);
        assert_eq!(p.block_count(), 6);
        p.validate().unwrap();
    }

    #[test]
    fn precedence() {
        let e = parse_expr("1 + 2 * 3 == 7 && !false").unwrap();
        match e.kind {
            ExprKind::Binary(BinOp::And, lhs, _) => {
                assert!(matches!(lhs.kind, ExprKind::Binary(BinOp::Eq, _, _)))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn literal_values() {
        assert_eq!(
            parse_value(r#"{a: [1, -2], "b c": null}"#).unwrap(),
            Value::record([
                ("a", Value::List(vec![Value::Int(1), Value::Int(-2)])),
                ("b c", Value::Null)
            ])
        );
        assert!(parse_value("x + 1").is_err());
    }

    #[test]
    fn builtin_arity_checked() {
        assert!(parse("method a() { len(1, 2); }").is_err());
    }
}
