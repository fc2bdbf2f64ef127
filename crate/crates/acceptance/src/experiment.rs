//! End-to-end blob experiment: baseline, SEL+align and Gaussian-noise arms
//! trained for 5k steps at batch 16 and resolution 32 under three seeds.

use std::time::Instant;

use eqgan::config::TrainConfig;
use eqgan::experiment::run_experiment;
use eqgan::metrics::FeatureExtractor;

use crate::{Outcome, Workspace};

pub const SEEDS: [u64; 3] = [0, 1, 2];
/// Longest acceptable CPU time for a single run.
pub const RUN_BUDGET_SECONDS: f64 = 3.0 * 3600.0;

const NAMES: [&str; 3] = [
    "end-to-end (a) spatial awareness",
    "end-to-end (b) equilibrium direction",
    "end-to-end (c) noise ablation",
];

pub fn check(ws: &Workspace) -> Vec<Outcome> {
    let start = Instant::now();
    let base = TrainConfig::default();
    let fail_all = |detail: String, seconds: f64| {
        NAMES.iter().map(|n| Outcome { name: n.to_string(), pass: false, detail: detail.clone(), seconds }).collect()
    };
    if (base.base_res, base.batch_size, base.steps) != (32, 16, 5000) {
        return fail_all(format!("default config is not res 32, batch 16, 5k steps: {base:?}"), 0.0);
    }
    let report = match run_experiment(&base, &SEEDS, &ws.experiment_dir(), &FeatureExtractor::shipped()) {
        Ok(r) => r,
        Err(e) => return fail_all(format!("experiment failed: {e}"), start.elapsed().as_secs_f64()),
    };
    let seconds = start.elapsed().as_secs_f64();
    let slowest = report.results.iter().map(|r| r.seconds).fold(0.0, f64::max);
    report
        .verdicts
        .iter()
        .zip(NAMES)
        .map(|(v, name)| {
            let within = slowest <= RUN_BUDGET_SECONDS;
            Outcome {
                name: name.to_string(),
                pass: v.pass && within,
                detail: format!("{}; {}; slowest run {:.0}s", v.name, v.detail, slowest),
                seconds,
            }
        })
        .collect()
}
