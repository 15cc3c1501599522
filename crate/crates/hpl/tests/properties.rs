//! Interpreter invariants over randomly generated handler programs.

use std::collections::BTreeSet;

use hpl::{
    execute, parse, print_program, ExceptionKind, ExecLimits, MemoryStore, Outcome, Program,
    RequestEnvelope,
};
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum E {
    Int(i64),
    Null,
    Var(usize),
    Bin(&'static str, Box<E>, Box<E>),
    Index(Vec<i64>, Box<E>),
    Field(&'static str),
    Call(Box<E>),
}

#[derive(Clone, Debug)]
enum S {
    Assign(usize, E),
    If(E, E, Vec<S>, Vec<S>),
    Loop(usize, Vec<S>),
    Spin,
    Throw,
    Respond(E),
}

const VARS: usize = 3;

fn expr() -> impl Strategy<Value = E> {
    let leaf = prop_oneof![
        (-3i64..4).prop_map(E::Int),
        Just(E::Null),
        (0..VARS).prop_map(E::Var),
        prop_oneof![Just("a"), Just("b")].prop_map(E::Field),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (
                prop_oneof![Just("+"), Just("-"), Just("*"), Just("/"), Just("%")],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| E::Bin(op, Box::new(a), Box::new(b))),
            (prop::collection::vec(0i64..5, 0..3), inner.clone())
                .prop_map(|(l, i)| E::Index(l, Box::new(i))),
            inner.prop_map(|a| E::Call(Box::new(a))),
        ]
    })
}

fn stmt() -> impl Strategy<Value = S> {
    let leaf = prop_oneof![
        6 => ((0..VARS), expr()).prop_map(|(v, e)| S::Assign(v, e)),
        1 => Just(S::Spin),
        1 => Just(S::Throw),
        2 => expr().prop_map(S::Respond),
    ];
    leaf.prop_recursive(2, 16, 3, |inner| {
        prop_oneof![
            (
                expr(),
                expr(),
                prop::collection::vec(inner.clone(), 0..3),
                prop::collection::vec(inner.clone(), 0..3)
            )
                .prop_map(|(a, b, t, e)| S::If(a, b, t, e)),
            ((1usize..4), prop::collection::vec(inner, 0..3)).prop_map(|(n, b)| S::Loop(n, b)),
        ]
    })
}

fn render_e(e: &E) -> String {
    match e {
        E::Int(i) if *i < 0 => format!("(0 - {})", -i),
        E::Int(i) => i.to_string(),
        E::Null => "null".into(),
        E::Var(v) => format!("v{v}"),
        E::Bin(op, a, b) => format!("({} {op} {})", render_e(a), render_e(b)),
        E::Index(l, i) => {
            let items: Vec<String> = l.iter().map(i64::to_string).collect();
            format!("[{}][{}]", items.join(", "), render_e(i))
        }
        E::Field(f) => format!("rec.{f}"),
        E::Call(a) => format!("twice({})", render_e(a)),
    }
}

fn render_s(s: &S, depth: usize, loops: &mut usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    match s {
        S::Assign(v, e) => out.push_str(&format!("{pad}v{v} = {};\n", render_e(e))),
        S::If(a, b, t, e) => {
            out.push_str(&format!("{pad}if ({} < {}) {{\n", render_e(a), render_e(b)));
            t.iter().for_each(|s| render_s(s, depth + 1, loops, out));
            out.push_str(&format!("{pad}}} else {{\n"));
            e.iter().for_each(|s| render_s(s, depth + 1, loops, out));
            out.push_str(&format!("{pad}}}\n"));
        }
        S::Loop(n, body) => {
            let k = *loops;
            *loops += 1;
            out.push_str(&format!("{pad}let k{k}: int = 0;\n{pad}while (k{k} < {n}) {{\n"));
            body.iter().for_each(|s| render_s(s, depth + 1, loops, out));
            out.push_str(&format!("{pad}    k{k} = k{k} + 1;\n{pad}}}\n"));
        }
        S::Spin => out.push_str(&format!("{pad}while (true) {{\n{pad}}}\n")),
        S::Throw => out.push_str(&format!("{pad}throw \"stop\";\n")),
        S::Respond(e) => out.push_str(&format!("{pad}respond(200, str({}));\n", render_e(e))),
    }
}

fn source(body: &[S]) -> String {
    let mut out = String::from(
        "method twice(x: int): int {\n    if (x == null) {\n        throw \"null\";\n    }\n    return x * 2;\n}\n\nmethod main(req: record) {\n    let rec = {a: 1, b: null};\n",
    );
    for v in 0..VARS {
        out.push_str(&format!("    let v{v} = {v};\n"));
    }
    let mut loops = 0;
    body.iter().for_each(|s| render_s(s, 1, &mut loops, &mut out));
    out.push_str("}\n\nroutes {\n    GET / -> main\n}\n");
    out
}

fn program() -> impl Strategy<Value = Program> {
    prop::collection::vec(stmt(), 1..6).prop_map(|b| parse(&source(&b)).expect("generated source parses"))
}

const LIMITS: ExecLimits = ExecLimits {
    max_steps: 5_000,
    max_depth: 16,
};

fn run(p: &Program) -> hpl::ExecutionResult {
    execute(p, &RequestEnvelope::new("r", "GET", "/"), &mut MemoryStore::default(), LIMITS)
        .expect("route exists and memory store accepts writes")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn execution_is_deterministic(p in program()) {
        let a = serde_json::to_string(&run(&p)).unwrap();
        let b = serde_json::to_string(&run(&p)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_run_ends_in_success_or_a_taxonomy_kind(p in program()) {
        match run(&p).outcome {
            Outcome::Success(r) => prop_assert!((100..=599).contains(&r.status)),
            Outcome::Exception(f) => {
                prop_assert!(ExceptionKind::ALL.contains(&f.kind));
                prop_assert_eq!(f.stack.len(), f.scopes.len());
                prop_assert_eq!(*f.stack.last().unwrap(), f.location);
            }
        }
    }

    #[test]
    fn coverage_is_sound(p in program()) {
        let r = run(&p);
        let declared = p.declared_blocks();
        prop_assert!(r.coverage.blocks.is_subset(&declared));
        let methods: BTreeSet<_> = p.methods.iter().map(|m| m.id).collect();
        prop_assert!(r.coverage.methods.is_subset(&methods));
        // Emptying every block the run never entered leaves the run unchanged.
        let mut pruned = p.clone();
        for m in &mut pruned.methods {
            let ids: Vec<_> = m.body.all_blocks().iter().map(|b| (b.id, b.origin)).collect();
            for (id, origin) in ids {
                if !r.coverage.blocks.contains(&origin) {
                    if let Some(b) = m.body.find_block_mut(id) {
                        b.stmts.clear();
                    }
                }
            }
        }
        prop_assert_eq!(run(&pruned), r);
    }

    #[test]
    fn printing_round_trips(p in program()) {
        let text = print_program(&p);
        let again = parse(&text).unwrap();
        prop_assert_eq!(print_program(&again), text);
        prop_assert_eq!(again, p);
    }
}

#[test]
fn three_deep_chain_reports_three_frames_in_call_order() {
    let src = "
method c(z: record): int {
    let depth: int = 3;
    return z.missing.x;
}
method b(y: record): int {
    let depth: int = 2;
    return c(y) + 1;
}
method a(req: record) {
    let depth: int = 1;
    let n: int = b({k: 1});
    respond(200, str(n));
}
routes { GET / -> a }";
    let p = parse(src).unwrap();
    let r = execute(
        &p,
        &RequestEnvelope::new("r", "GET", "/"),
        &mut MemoryStore::default(),
        ExecLimits::default(),
    )
    .unwrap();
    let f = r.failure().unwrap();
    assert_eq!(f.kind, ExceptionKind::NullDeref);
    let names: Vec<&str> = f
        .stack
        .iter()
        .map(|l| p.method(l.method).unwrap().name.as_str())
        .collect();
    assert_eq!(names, ["a", "b", "c"]);
    let depths: Vec<String> = f
        .scopes
        .iter()
        .map(|s| s.vars.iter().find(|v| v.name == "depth").unwrap().value.to_string())
        .collect();
    assert_eq!(depths, ["1", "2", "3"]);
    assert_eq!(f.location, *f.stack.last().unwrap());
}
