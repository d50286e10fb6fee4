//! Experiment harness: data generation, training, evaluation and reporting
//! over a run directory, driven by an [`ExperimentConfig`].

pub mod config;
pub mod pipeline;
pub mod report;

use std::time::Instant;

pub use config::{ExperimentConfig, Method, Scale};
pub use pipeline::{evaluate, gen_data, train, Run};
pub use report::{report, update_manifest, Manifest, ReportOutcome};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Missing(_) => EXIT_MISSING,
        _ => EXIT_FAILURE,
    }
}

/// Runs `f` and records its wall time in the run manifest.
pub fn timed<T>(run: &Run, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    update_manifest(run, stage, start.elapsed().as_secs_f64())?;
    Ok(out)
}

/// Every stage for every configured split and method, then the report.
pub fn run_all(run: &Run) -> Result<ReportOutcome> {
    timed(run, "gen-data", || gen_data(run))?;
    for &split in &run.cfg.splits {
        for &method in &run.cfg.methods {
            timed(run, &format!("train/{}/{}", split.slug(), method.slug()), || train(run, method, split))?;
            timed(run, &format!("evaluate/{}/{}", split.slug(), method.slug()), || {
                evaluate(run, method, split)
            })?;
        }
    }
    timed(run, "report", || report(run))
}
