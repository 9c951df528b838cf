use anyhow::anyhow;
use pipmn::model::gradsuite::{run_suite, SuiteSize};

use super::{Failure, EXIT_INVALID};

pub fn run(size: SuiteSize, json: bool) -> Result<(), Failure> {
    let entries = run_suite(size);
    let worst = entries.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name.as_str())
        .collect();
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&entries).expect("report serializes")
        );
    } else {
        println!(
            "{:<36} {:>7} {:>12}  worst coordinate (analytic / numeric)",
            "check", "coords", "max rel err"
        );
        for e in &entries {
            let r = &e.report;
            let at = match (&r.worst, &r.failure) {
                (_, Some(f)) => format!("FAILED: {f}"),
                (Some(c), None) => format!(
                    "{}[{}]  {:+.6e} / {:+.6e}",
                    c.param, c.index, c.analytic, c.numeric
                ),
                (None, None) => "-".into(),
            };
            println!("{:<36} {:>7} {:>12.3e}  {at}", e.name, r.checked, r.max_rel_err);
        }
        let tol = entries.first().map_or(1e-4, |e| e.report.tol);
        println!(
            "max relative error {worst:.3e} over {} checks (tolerance {tol:e}): {}",
            entries.len(),
            if failed.is_empty() { "PASS" } else { "FAIL" }
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_INVALID,
            anyhow!("gradient check failed for {}", failed.join(", ")),
        ))
    }
}
