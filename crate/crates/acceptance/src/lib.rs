//! Acceptance checks.
//!
//! Each check exercises one acceptance criterion at its stated tolerance
//! and returns a one-line summary of what it measured. [`run_all`] runs
//! them in order, timing each against its budget.

pub mod align;
pub mod determinism;
pub mod experiment;
pub mod gradcam;
pub mod heatmap;
pub mod metrics;
pub mod sel;
pub mod service;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// Result of one criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!("{} {} ({:.1}s): {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.seconds, self.detail)
    }
}

/// Runs `check`, failing it on error, panic or a blown time budget.
pub fn timed(name: &str, budget: Option<Duration>, check: impl FnOnce() -> anyhow::Result<String>) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(Ok(detail)) => (true, detail),
        Ok(Err(e)) => (false, format!("{e:#}")),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(b) = budget.filter(|b| elapsed > *b) {
        pass = false;
        detail = format!("took {:.1}s, over the {:.0}s budget; {detail}", elapsed.as_secs_f64(), b.as_secs_f64());
    }
    Outcome { name: name.to_string(), pass, detail, seconds: elapsed.as_secs_f64() }
}

/// Shared scratch space: the experiment leaves its runs here and the
/// service check serves one of its checkpoints.
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn experiment_dir(&self) -> PathBuf {
        self.dir.join("experiment")
    }

    /// The trained SEL+align checkpoint of the first experiment seed.
    pub fn blob_checkpoint(&self) -> Option<PathBuf> {
        Some(self.experiment_dir().join("sel_align_seed0/final.bin")).filter(|p| p.is_file())
    }
}

type Check = fn() -> anyhow::Result<String>;

/// Runs every check whose name contains one of `filters` (all when empty),
/// reporting each outcome as it finishes.
pub fn run_all(dir: &Path, filters: &[String], mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let ws = Workspace { dir: dir.to_path_buf() };
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut outcomes = Vec::new();
    let mut push = |o: Outcome, outcomes: &mut Vec<Outcome>| {
        report(&o);
        outcomes.push(o);
    };
    let secs = Duration::from_secs;
    let simple: [(&str, Option<Duration>, Check); 5] = [
        ("heatmap suite", Some(secs(60)), heatmap::check),
        ("SEL suite", Some(secs(120)), sel::check),
        ("GradCAM suite", Some(secs(120)), gradcam::check),
        ("alignment-loss suite", None, align::check),
        ("metrics suite", None, metrics::check),
    ];
    for (name, budget, check) in simple {
        if wanted(name) {
            push(timed(name, budget, check), &mut outcomes);
        }
    }
    if wanted("end-to-end") {
        for o in experiment::check(&ws) {
            push(o, &mut outcomes);
        }
    }
    if wanted("determinism") {
        push(timed("determinism", None, determinism::check), &mut outcomes);
    }
    if wanted("service contract") {
        push(timed("service contract", None, || service::check(&ws)), &mut outcomes);
    }
    outcomes
}
