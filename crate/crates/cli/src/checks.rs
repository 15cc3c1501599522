//! The assertions each experiment must meet. A check returns the list of violated
//! claims; an empty list means the run passes.

use shadowfix_core::experiments::rq1::Rq1Report;
use shadowfix_core::experiments::rq2::{Label, Rq2Report};
use shadowfix_core::experiments::rq4::Rq4Report;
use shadowfix_core::oracles::Oracle;
use shadowfix_core::patch::{PatchModel, PatchState};
use shadowfix_core::profile::Scenario;
use shadowfix_net::overhead::OverheadReport;

/// Overhead above this percentage fails the run.
pub const MAX_OVERHEAD_PCT: f64 = 25.0;

fn digests(before: &str, after: &str) -> Option<String> {
    (before != after).then(|| format!("base store digest changed: {before} -> {after}"))
}

pub fn rq1(report: &Rq1Report, requested: usize) -> Vec<String> {
    let mut out = Vec::new();
    if report.rows.len() < requested {
        out.push(format!(
            "only {} of {requested} faults trigger under the workload",
            report.rows.len()
        ));
    }
    for row in &report.rows {
        if row.null_recovery.valid == 0 {
            out.push(format!("{}: no valid null-recovery patch", row.fault));
        }
    }
    let (mut nr, mut es) = ((0, 0), (0, 0));
    for row in &report.rows {
        nr = (nr.0 + row.null_recovery.valid, nr.1 + row.null_recovery.invalid);
        es = (es.0 + row.exception_stopper.valid, es.1 + row.exception_stopper.invalid);
    }
    let t = &report.totals;
    if (t.null_recovery.valid, t.null_recovery.invalid) != nr
        || (t.exception_stopper.valid, t.exception_stopper.invalid) != es
    {
        out.push("totals differ from the row sums".into());
    }
    out.extend(digests(&report.base_digest_before, &report.base_digest_after));
    out
}

fn flagged(report: &Rq2Report, oracle: Oracle) -> Option<Vec<&str>> {
    report.oracles.contains(&oracle).then(|| {
        report
            .rows
            .iter()
            .filter(|r| r.cell(oracle).is_some_and(|c| c.detected))
            .map(|r| r.patch_id.as_str())
            .collect()
    })
}

/// Checks only the claims whose oracles were run.
pub fn rq2(report: &Rq2Report) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(content) = flagged(report, Oracle::Content) {
        for row in report.rows.iter().filter(|r| r.label == Label::KnownRegressive) {
            if !content.contains(&row.patch_id.as_str()) {
                out.push(format!("{}: known-regressive patch not flagged by content", row.patch_id));
            }
        }
        if let Some(status) = flagged(report, Oracle::Status) {
            if let Some(extra) = status.iter().find(|id| !content.contains(id)) {
                out.push(format!("{extra}: flagged by status but not by content"));
            }
            if status.len() >= content.len() {
                out.push("status flags are not a strict subset of content flags".into());
            }
        }
    }
    for row in report.rows.iter().filter(|r| r.label == Label::KnownCorrect) {
        for cell in &row.cells {
            if cell.detected || cell.magnitude != 0.0 {
                out.push(format!("{}: known-correct patch diverges under {}", row.patch_id, cell.oracle));
            }
        }
    }
    out.extend(digests(&report.base_digest_before, &report.base_digest_after));
    out
}

pub fn rq3(report: &OverheadReport) -> Vec<String> {
    if report.overhead_pct <= MAX_OVERHEAD_PCT {
        Vec::new()
    } else {
        vec![format!(
            "overhead {:.2} % exceeds {MAX_OVERHEAD_PCT} %",
            report.overhead_pct
        )]
    }
}

/// Shipping needs a generated survivor output-equal to the human fix; admin-email needs
/// a generated survivor that turns the error page into a 200.
pub fn rq4(report: &Rq4Report) -> Vec<String> {
    let mut out = Vec::new();
    match report.scenario {
        Scenario::Shipping => {
            if report.output_equal_survivors().next().is_none() {
                out.push("no surviving generated patch is output-equal to the human fix".into());
            }
        }
        Scenario::AdminEmail => {
            let suppressed = report.ranked.iter().any(|r| {
                r.model != PatchModel::Human
                    && r.state == PatchState::Surviving
                    && r.failing_status == 200
            });
            if !suppressed {
                out.push("no surviving generated patch suppresses the error page".into());
            }
        }
    }
    match &report.approval {
        Some(a) if a.failing_status != 200 => out.push(format!(
            "failing request still answers {} after approving {}",
            a.failing_status, a.patch_id
        )),
        None => out.push("nothing was approved".into()),
        _ => {}
    }
    out
}
