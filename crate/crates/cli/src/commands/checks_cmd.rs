//! The kernel-check and theory-check commands: run the property suites,
//! emit one row per property, and report overall pass/fail.

use std::time::Instant;

use galu_core::checks::{self, CheckOutcome};

use crate::config::Config;
use crate::rows::ResultRow;

use super::CmdError;

pub struct CheckReport {
    pub rows: Vec<ResultRow>,
    pub outcomes: Vec<CheckOutcome>,
    pub all_passed: bool,
}

fn to_rows(experiment: &str, outcomes: &[CheckOutcome], seed: u64, elapsed: f64) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for out in outcomes {
        for (metric, value) in [
            ("measured", out.measured),
            ("threshold", out.threshold),
            ("pass", f64::from(out.passed)),
        ] {
            rows.push(ResultRow::new(
                experiment,
                (0, 0, 0),
                &out.name,
                metric,
                value,
                seed,
                elapsed,
            ));
        }
    }
    rows
}

pub fn run_kernel(cfg: &Config) -> Result<CheckReport, CmdError> {
    let t0 = Instant::now();
    let outcomes = checks::kernel_suite(cfg.seed);
    let all_passed = outcomes.iter().all(|o| o.passed);
    Ok(CheckReport {
        rows: to_rows("kernel-check", &outcomes, cfg.seed, t0.elapsed().as_secs_f64()),
        outcomes,
        all_passed,
    })
}

pub fn run_theory(cfg: &Config) -> Result<CheckReport, CmdError> {
    let t0 = Instant::now();
    let outcomes = checks::theory_suite(cfg.seed, cfg.negate_indicator)?;
    let all_passed = outcomes.iter().all(|o| o.passed);
    Ok(CheckReport {
        rows: to_rows("theory-check", &outcomes, cfg.seed, t0.elapsed().as_secs_f64()),
        outcomes,
        all_passed,
    })
}

pub fn summary_text(outcomes: &[CheckOutcome]) -> String {
    let mut text = String::new();
    for out in outcomes {
        text.push_str(&format!(
            "{} {}: measured {:.6e} vs threshold {:.6e} ({})\n",
            if out.passed { "PASS" } else { "FAIL" },
            out.name,
            out.measured,
            out.threshold,
            out.detail
        ));
    }
    text
}
