//! A production run with several seeded faults live at once, for checking the ranked
//! report against the event log.

use std::collections::BTreeSet;
use std::sync::Arc;

use hpl::{ExecLimits, Location, Program};

use super::rq1::{select_faults, Rq1Config};
use crate::app::{App, SESSION_HEADER};
use crate::faults::apply_fault;
use crate::harness::{Harness, HarnessConfig};
use crate::profile::profile;
use crate::replay::drive;
use crate::workload::{generate, CookieJar};

#[derive(Clone, Debug)]
pub struct RankingConfig {
    pub faults: usize,
    pub seed: u64,
    pub workload_seed: u64,
    /// Workloads sent; later ones repeat the failures.
    pub passes: usize,
    pub limits: ExecLimits,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            faults: 3,
            seed: 1,
            workload_seed: 42,
            passes: 2,
            limits: ExecLimits::default(),
        }
    }
}

pub struct RankingRun {
    pub faults: Vec<Location>,
    pub harness: Harness,
    /// The patch rejected between the first and second pass, if any.
    pub rejected: Option<String>,
}

/// The shop program with `config.faults` triggering faults in distinct methods, in
/// the sampler's order.
pub fn faulted_program(config: &RankingConfig) -> (Program, Vec<Location>) {
    let (candidates, _, _) = select_faults(&Rq1Config {
        faults: usize::MAX,
        seed: config.seed,
        workload_seed: config.workload_seed,
        limits: config.limits,
        ..Rq1Config::default()
    });
    let mut methods = BTreeSet::new();
    let faults: Vec<Location> = candidates
        .into_iter()
        .map(|(_, loc)| loc)
        .filter(|loc| methods.insert(loc.method))
        .take(config.faults)
        .collect();
    let mut program = profile("shop").expect("bundled profile").program();
    for loc in &faults {
        program = apply_fault(&program, *loc).expect("faults in distinct methods stay eligible").0;
    }
    (program, faults)
}

/// Seeds the faults of [`faulted_program`] into production, then sends the workloads
/// of seeds `workload_seed`, `workload_seed + 1`, ... through the harness, one per
/// pass. After the first pass the second-ranked patch is rejected, so the report also
/// reflects an operator decision.
pub fn run(config: &RankingConfig) -> RankingRun {
    let (program, faults) = faulted_program(config);
    let prof = profile("shop").expect("bundled profile");
    let app = App::new(program, Arc::new(prof.store()), config.limits);
    let harness = Harness::new(
        Arc::new(app),
        HarnessConfig {
            limits: config.limits,
            ..HarnessConfig::default()
        },
    );
    let mut rejected = None;
    for pass in 0..config.passes {
        let workload = generate("shop", config.workload_seed + pass as u64).expect("bundled profile");
        let mut jar = CookieJar::new(SESSION_HEADER);
        drive(&harness, &mut jar, workload.requests());
        if pass == 0 {
            if let Some(e) = harness.ranked_report().get(1) {
                harness.reject(&e.patch.id).expect("ranked patches can be rejected");
                rejected = Some(e.patch.id.clone());
            }
        }
    }
    RankingRun {
        faults,
        harness,
        rejected,
    }
}
