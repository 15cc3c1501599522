//! Exception-stopper space sizes on generated failures, checked three ways: the
//! enumerator, the closed form over the recovered failure, and the count implied by how
//! the failing call chain was built.

use hpl::{execute, DeclaredType, ExecLimits, Failure, MemoryStore, Program, RequestEnvelope};
use serde::{Deserialize, Serialize};

use crate::patch::enumerate_exception_stopper;
use crate::rng::Rng;
use crate::signature::Signature;

/// What the generator decided for one frame. `None` is void, or an untyped `let`.
#[derive(Clone, Debug)]
struct FrameShape {
    ret: Option<DeclaredType>,
    vars: Vec<Option<DeclaredType>>,
}

impl FrameShape {
    /// Patches this frame contributes, counted from the shape alone.
    fn expected(&self) -> usize {
        match self.ret {
            None => 1,
            Some(r) => {
                let compatible = self
                    .vars
                    .iter()
                    .filter(|v| match v {
                        None => true,
                        Some(t) => *t == r || *t == DeclaredType::Any || r == DeclaredType::Any,
                    })
                    .count();
                compatible + 1
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub seed: u64,
    pub source: String,
    pub program: Program,
    pub failure: Failure,
    /// Space size implied by the generated shapes.
    pub expected: usize,
}

const RETURNS: [Option<DeclaredType>; 7] = [
    None,
    Some(DeclaredType::Int),
    Some(DeclaredType::Str),
    Some(DeclaredType::Bool),
    Some(DeclaredType::Record),
    Some(DeclaredType::List),
    Some(DeclaredType::Any),
];

const VAR_TYPES: [Option<DeclaredType>; 7] = [
    None,
    Some(DeclaredType::Int),
    Some(DeclaredType::Str),
    Some(DeclaredType::Bool),
    Some(DeclaredType::Record),
    Some(DeclaredType::List),
    Some(DeclaredType::Any),
];

const FAILURES: [&str; 4] = [
    "let q = {a: null}.a.b;",
    "let q = 1 / 0;",
    "throw \"bad\";",
    "let q = [1, 2][5];",
];

fn literal(rng: &mut Rng, ty: Option<DeclaredType>) -> &'static str {
    if rng.below(5) == 0 {
        return "null";
    }
    match ty {
        Some(DeclaredType::Int) => "7",
        Some(DeclaredType::Str) => "\"s\"",
        Some(DeclaredType::Bool) => "true",
        Some(DeclaredType::Record) => "{a: 1}",
        Some(DeclaredType::List) => "[1]",
        Some(DeclaredType::Any) | None => *rng.pick(&["2", "\"t\"", "[]"]),
    }
}

fn decl(ty: Option<DeclaredType>) -> String {
    ty.map_or(String::new(), |t| format!(": {t}"))
}

/// A handler calling a chain of 0 to 4 helpers whose innermost one fails. Helper
/// return types, parameters and locals are drawn from `seed`.
pub fn generate_chain(seed: u64) -> Chain {
    let mut rng = Rng::new(seed);
    let helpers = rng.range(0, 4) as usize;
    let mut shapes = vec![FrameShape {
        ret: None,
        vars: vec![Some(DeclaredType::Record)],
    }];
    let mut params: Vec<Vec<Option<DeclaredType>>> = vec![Vec::new()];
    for _ in 0..helpers {
        let ret = *rng.pick(&RETURNS);
        let p: Vec<_> = (0..rng.below(3)).map(|_| *rng.pick(&VAR_TYPES[1..])).collect();
        shapes.push(FrameShape { ret, vars: p.clone() });
        params.push(p);
    }
    let mut methods = Vec::new();
    for (i, shape) in shapes.iter_mut().enumerate() {
        let name = if i == 0 { "main".to_string() } else { format!("h{i}") };
        let sig = if i == 0 {
            "req: record".to_string()
        } else {
            params[i]
                .iter()
                .enumerate()
                .map(|(k, t)| format!("p{k}{}", decl(*t)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut body = String::new();
        for k in 0..rng.below(4) {
            let ty = *rng.pick(&VAR_TYPES);
            body.push_str(&format!("    let v{k}{} = {};\n", decl(ty), literal(&mut rng, ty)));
            shape.vars.push(ty);
        }
        if i + 1 < params.len() {
            let args: Vec<&str> = params[i + 1].iter().map(|t| literal(&mut rng, *t)).collect();
            body.push_str(&format!("    h{}({});\n", i + 1, args.join(", ")));
        } else {
            body.push_str(&format!("    {}\n", rng.pick(&FAILURES)));
        }
        match shape.ret {
            Some(t) => body.push_str(&format!("    return {};\n", literal(&mut rng, Some(t)))),
            None if i == 0 => body.push_str("    respond(200, \"ok\");\n"),
            None => {}
        }
        let ret = shape.ret.map_or(String::new(), |t| format!(": {t}"));
        methods.push(format!("method {name}({sig}){ret} {{\n{body}}}\n"));
    }
    let source = format!("{}\nroutes {{\n    GET / -> main\n}}\n", methods.join("\n"));
    let program = hpl::parse(&source).expect("generated chains parse");
    let result = execute(
        &program,
        &RequestEnvelope::new("r", "GET", "/"),
        &mut MemoryStore::default(),
        ExecLimits::default(),
    )
    .expect("the route exists");
    let failure = result.failure().expect("the innermost helper fails").clone();
    Chain {
        seed,
        source,
        program,
        failure,
        expected: shapes.iter().map(FrameShape::expected).sum(),
    }
}

/// `Σ_f (void ? 1 : 0) + |compatible pairs in f| + (non-void ? 1 : 0)` over the frames
/// of a recovered failure.
pub fn closed_form(program: &Program, failure: &Failure) -> usize {
    failure
        .scopes
        .iter()
        .map(|f| match program.method(f.method).and_then(|m| m.ret) {
            None => 1,
            Some(r) => f.vars.iter().filter(|v| v.ty.compatible(r)).count() + 1,
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceCheck {
    pub seed: u64,
    pub kind: String,
    pub frames: usize,
    pub enumerated: usize,
    pub closed_form: usize,
    pub expected: usize,
}

impl SpaceCheck {
    pub fn agrees(&self) -> bool {
        self.enumerated == self.closed_form && self.closed_form == self.expected
    }
}

/// Checks `n` chains generated from seeds `seed`, `seed + 1`, ...
pub fn check(n: usize, seed: u64) -> Vec<SpaceCheck> {
    (0..n as u64)
        .map(|i| {
            let c = generate_chain(seed.wrapping_add(i));
            let space = enumerate_exception_stopper(&c.program, &c.failure, &Signature::new("t", "-", "-"));
            SpaceCheck {
                seed: c.seed,
                kind: c.failure.kind.to_string(),
                frames: c.failure.stack.len(),
                enumerated: space.len(),
                closed_form: closed_form(&c.program, &c.failure),
                expected: c.expected,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_fail_in_the_innermost_helper() {
        for seed in 0..50 {
            let c = generate_chain(seed);
            let innermost = c.failure.stack.last().unwrap().method;
            let last = c.program.methods.iter().map(|m| m.id).max().unwrap();
            assert_eq!(innermost, last, "seed {seed}:\n{}", c.source);
            assert_eq!(c.failure.stack.len(), c.program.methods.len());
        }
    }

    #[test]
    fn all_three_counts_agree() {
        let checks = check(300, 0);
        let bad: Vec<_> = checks.iter().filter(|c| !c.agrees()).collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert!(checks.iter().any(|c| c.frames == 5));
        let kinds: std::collections::BTreeSet<_> = checks.iter().map(|c| c.kind.as_str()).collect();
        assert_eq!(kinds.len(), 4, "{kinds:?}");
    }
}
