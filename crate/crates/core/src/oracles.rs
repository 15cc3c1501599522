//! Request oracles (did one execution fail?) and execution-comparison oracles (did a
//! patched execution diverge from the reference?).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use hpl::{CoverageTrace, ExecutionResult, Outcome, ResponseEnvelope};
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub reason: String,
}

/// Passes unless the status is 5xx. Client errors are not server failures.
pub fn request_oracle_status(resp: &ResponseEnvelope) -> Verdict {
    let failed = (500..600).contains(&resp.status);
    Verdict {
        passed: !failed,
        reason: format!("status {}", resp.status),
    }
}

/// Passes iff the execution completed without an unhandled exception.
pub fn request_oracle_exception(result: &ExecutionResult) -> Verdict {
    match &result.outcome {
        Outcome::Success(_) => Verdict {
            passed: true,
            reason: "success".into(),
        },
        Outcome::Exception(f) => Verdict {
            passed: false,
            reason: format!("{} at {}", f.kind, f.location),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    Status,
    Content,
    MethodCoverage,
    BlockCoverage,
}

impl Oracle {
    pub const ALL: [Oracle; 4] = [
        Oracle::Status,
        Oracle::Content,
        Oracle::MethodCoverage,
        Oracle::BlockCoverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Oracle::Status => "status",
            Oracle::Content => "content",
            Oracle::MethodCoverage => "method-coverage",
            Oracle::BlockCoverage => "block-coverage",
        }
    }

    pub fn needs_coverage(self) -> bool {
        matches!(self, Oracle::MethodCoverage | Oracle::BlockCoverage)
    }
}

impl fmt::Display for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Oracle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Oracle::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown oracle `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub oracle: Oracle,
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_id: Option<String>,
    /// Always equivalent to `magnitude > 0`.
    pub diverged: bool,
    /// Normalized symmetric difference for coverage oracles, 0 or 1 otherwise.
    pub magnitude: f64,
}

impl DivergenceReport {
    fn new(oracle: Oracle, request_id: &str, magnitude: f64) -> Self {
        DivergenceReport {
            oracle,
            request_id: request_id.to_string(),
            patch_id: None,
            diverged: magnitude > 0.0,
            magnitude,
        }
    }

    pub fn with_patch(mut self, id: &str) -> Self {
        self.patch_id = Some(id.to_string());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn to_json_lines(reports: &[DivergenceReport]) -> String {
    reports.iter().map(|r| r.to_json_line() + "\n").collect()
}

/// Ordered body rewrites applied before content comparison.
#[derive(Clone, Debug)]
pub struct ScrubRules {
    rules: Vec<(Regex, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScrubRuleError {
    #[error("line {0}: expected `pattern<TAB>replacement`")]
    Shape(usize),
    #[error("line {0}: {1}")]
    Pattern(usize, String),
    #[error("line {0}: rule is not idempotent on its own replacement")]
    NotIdempotent(usize),
}

/// Dates and times rendered by the shop's footer.
pub const DATE_RULE: (&str, &str) = (r"date=\d{4}-\d{2}-\d{2}(T[0-9:.]+Z)?", "date=<T>");
/// Session tokens, `sid-` plus 16 hex digits.
pub const SESSION_RULE: (&str, &str) = (r"sid-[0-9a-f]{16}", "<S>");
/// Order ids derive from the request id, which differs between replays.
pub const ORDER_RULE: (&str, &str) = (r"ord-[0-9a-f]{16}", "ord-<O>");

impl Default for ScrubRules {
    fn default() -> Self {
        ScrubRules::new([DATE_RULE, SESSION_RULE, ORDER_RULE]).expect("built-in rules are valid")
    }
}

impl ScrubRules {
    pub fn none() -> Self {
        ScrubRules { rules: Vec::new() }
    }

    /// A rule is rejected if its replacement is itself rewritten by its own pattern, which
    /// would break idempotence.
    pub fn new<'a>(
        rules: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ScrubRuleError> {
        Self::build(rules.into_iter().enumerate().map(|(i, (p, r))| (i + 1, p, r)))
    }

    fn build<'a>(
        rules: impl IntoIterator<Item = (usize, &'a str, &'a str)>,
    ) -> Result<Self, ScrubRuleError> {
        let mut out = Vec::new();
        for (line, p, r) in rules {
            let re = Regex::new(p).map_err(|e| ScrubRuleError::Pattern(line, e.to_string()))?;
            if re.is_match(r) {
                return Err(ScrubRuleError::NotIdempotent(line));
            }
            out.push((re, r.to_string()));
        }
        Ok(ScrubRules { rules: out })
    }

    /// One rule per line, `pattern<TAB>replacement`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, ScrubRuleError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (p, r) = line.split_once('\t').ok_or(ScrubRuleError::Shape(i + 1))?;
            pairs.push((i + 1, p, r));
        }
        Self::build(pairs)
    }

    pub fn to_text(&self) -> String {
        self.rules
            .iter()
            .map(|(re, r)| format!("{}\t{}\n", re.as_str(), r))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Replacements are literal; `$` in a replacement has no special meaning.
    pub fn scrub(&self, body: &str) -> String {
        let mut s = body.to_string();
        for (re, r) in &self.rules {
            s = re.replace_all(&s, regex::NoExpand(r)).into_owned();
        }
        s
    }
}

pub fn compare_status(
    request_id: &str,
    reference: &ResponseEnvelope,
    patched: &ResponseEnvelope,
) -> DivergenceReport {
    let m = if reference.status == patched.status { 0.0 } else { 1.0 };
    DivergenceReport::new(Oracle::Status, request_id, m)
}

pub fn compare_content(
    request_id: &str,
    reference: &ResponseEnvelope,
    patched: &ResponseEnvelope,
    rules: &ScrubRules,
) -> DivergenceReport {
    let a = rules.scrub(&reference.body_text());
    let b = rules.scrub(&patched.body_text());
    DivergenceReport::new(Oracle::Content, request_id, if a == b { 0.0 } else { 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Method,
    Block,
}

/// `|A △ B| / |A ∪ B|`, 0 when both sets are empty.
pub fn symmetric_difference_ratio<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.symmetric_difference(b).count() as f64 / union as f64
}

pub fn compare_coverage(
    request_id: &str,
    reference: &CoverageTrace,
    patched: &CoverageTrace,
    granularity: Granularity,
) -> DivergenceReport {
    match granularity {
        Granularity::Method => DivergenceReport::new(
            Oracle::MethodCoverage,
            request_id,
            symmetric_difference_ratio(&reference.methods, &patched.methods),
        ),
        Granularity::Block => DivergenceReport::new(
            Oracle::BlockCoverage,
            request_id,
            symmetric_difference_ratio(&reference.blocks, &patched.blocks),
        ),
    }
}

/// One side of a comparison: the response and, when known, the coverage that produced it.
#[derive(Clone, Debug)]
pub struct Observed<'a> {
    pub response: &'a ResponseEnvelope,
    pub coverage: Option<&'a CoverageTrace>,
}

/// Runs one oracle. Coverage oracles treat a missing trace as empty.
pub fn compare(
    oracle: Oracle,
    request_id: &str,
    reference: &Observed<'_>,
    patched: &Observed<'_>,
    rules: &ScrubRules,
) -> DivergenceReport {
    let empty = CoverageTrace::default();
    let cov = |o: &Observed<'_>| o.coverage.cloned().unwrap_or_else(|| empty.clone());
    match oracle {
        Oracle::Status => compare_status(request_id, reference.response, patched.response),
        Oracle::Content => compare_content(request_id, reference.response, patched.response, rules),
        Oracle::MethodCoverage => {
            compare_coverage(request_id, &cov(reference), &cov(patched), Granularity::Method)
        }
        Oracle::BlockCoverage => {
            compare_coverage(request_id, &cov(reference), &cov(patched), Granularity::Block)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hpl::{BlockId, MethodId};

    fn trace(methods: &[u32], blocks: &[u32]) -> CoverageTrace {
        CoverageTrace {
            methods: methods.iter().map(|m| MethodId(*m)).collect(),
            blocks: blocks.iter().map(|b| BlockId(*b)).collect(),
        }
    }

    #[test]
    fn status_oracle_is_5xx_only() {
        assert!(request_oracle_status(&ResponseEnvelope::new(200, "")).passed);
        assert!(!request_oracle_status(&ResponseEnvelope::new(500, "")).passed);
        assert!(!request_oracle_status(&ResponseEnvelope::new(503, "")).passed);
        assert!(request_oracle_status(&ResponseEnvelope::new(404, "")).passed);
    }

    #[test]
    fn scrub_examples() {
        let r = ScrubRules::default();
        assert_eq!(r.scrub("x date=2017-01-01 y"), "x date=<T> y");
        assert_eq!(
            r.scrub("date=2023-11-14T22:13:20.000Z"),
            "date=<T>"
        );
        assert_eq!(r.scrub("session=sid-0123456789abcdef"), "session=<S>");
    }

    #[test]
    fn rule_file_round_trip_and_rejections() {
        let r = ScrubRules::default();
        let back = ScrubRules::parse(&r.to_text()).unwrap();
        assert_eq!(back.to_text(), r.to_text());
        assert_eq!(ScrubRules::parse("nope").unwrap_err(), ScrubRuleError::Shape(1));
        assert_eq!(
            ScrubRules::parse("# c\n\na+\taa\n").unwrap_err(),
            ScrubRuleError::NotIdempotent(3)
        );
        assert!(matches!(ScrubRules::parse("(\tx"), Err(ScrubRuleError::Pattern(1, _))));
    }

    #[test]
    fn coverage_formula_examples() {
        let a = trace(&[1], &[]);
        let b = trace(&[1, 2], &[]);
        assert_eq!(compare_coverage("r", &a, &a, Granularity::Method).magnitude, 0.0);
        assert_eq!(compare_coverage("r", &a, &b, Granularity::Method).magnitude, 0.5);
        let c = trace(&[3], &[]);
        assert_eq!(compare_coverage("r", &a, &c, Granularity::Method).magnitude, 1.0);
        let e = CoverageTrace::default();
        let r = compare_coverage("r", &e, &e, Granularity::Block);
        assert!(!r.diverged);
        assert_eq!(r.magnitude, 0.0);
    }

    #[test]
    fn content_ignores_scrubbed_fields_only() {
        let rules = ScrubRules::default();
        let a = ResponseEnvelope::new(200, "total 10 date=2017-01-01");
        let b = ResponseEnvelope::new(200, "total 10 date=2018-02-02");
        let c = ResponseEnvelope::new(500, "total 11 date=2018-02-02");
        assert!(!compare_content("r", &a, &b, &rules).diverged);
        assert!(compare_content("r", &a, &c, &rules).diverged);
        assert!(compare_status("r", &a, &c).diverged);
        assert!(!compare_status("r", &a, &b).diverged);
    }

    #[test]
    fn report_json_line() {
        let r = compare_status("r1", &ResponseEnvelope::new(200, ""), &ResponseEnvelope::new(500, ""))
            .with_patch("p1");
        assert_eq!(
            r.to_json_line(),
            r#"{"oracle":"status","request_id":"r1","patch_id":"p1","diverged":true,"magnitude":1.0}"#
        );
    }
}
