//! Result files and the summary table printed on stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::Context;
use pmcausal_core::estimators::EstimateReport;
use pmcausal_core::simulation::ExperimentResult;

use crate::exit::{CliResult, Failure, OTHER};

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(|e| Failure::new(OTHER, e))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(|e| Failure::new(OTHER, e))
}

/// Writes `result.json` (the payload bytes as given) and `result.csv`.
pub fn write_experiment(dir: &Path, payload: &[u8], result: &ExperimentResult) -> CliResult {
    ensure_dir(dir)?;
    write(&dir.join("result.json"), payload)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    write(&dir.join("result.csv"), &csv)
}

pub fn write_report(dir: &Path, report: &EstimateReport) -> CliResult {
    ensure_dir(dir)?;
    let bytes = serde_json::to_vec_pretty(report).map_err(|e| Failure::new(OTHER, e))?;
    write(&dir.join("report.json"), &bytes)
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

pub fn experiment_table(r: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} replicates, cohort {}, {} of {} eligible, seed {}",
        r.scenario, r.n_replicates, r.cohort_size, r.superpop_eligible, r.superpop_size, r.master_seed
    );
    let _ = writeln!(
        s,
        "{:<9}{:<7}{:>10}{:>10}{:>10}{:>8}{:>8}{:>9}",
        "estimand", "method", "mean", "sd", "mae", "ok", "failed", "flagged"
    );
    for (e, row) in &r.summary {
        let truth = r.truth.get(e).map(|t| t.effect);
        let _ = writeln!(s, "{:<9}{:<7}{:>10}", e.to_string(), "truth", num(truth));
        for (m, c) in row {
            let _ = writeln!(
                s,
                "{:<9}{:<7}{:>10}{:>10}{:>10}{:>8}{:>8}{:>9}",
                "",
                m.to_string(),
                num(c.mean),
                num(c.sd),
                num(c.mae),
                c.n_ok,
                c.n_failed,
                c.n_flagged
            );
        }
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn report_table(r: &EstimateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} eligible units", r.n_units);
    let _ = writeln!(
        s,
        "{:<9}{:<7}{:>10}{:>10}{:>10}  notes",
        "estimand", "method", "effect", "pm", "control"
    );
    for (e, row) in &r.estimates {
        for (m, c) in row {
            let notes = match &c.error {
                Some(err) => err.clone(),
                None => c.diagnostics.flags.join("; "),
            };
            let _ = writeln!(
                s,
                "{:<9}{:<7}{:>10}{:>10}{:>10}  {}",
                e.to_string(),
                m.to_string(),
                num(c.effect),
                num(c.pm_mean),
                num(c.control_mean),
                notes
            );
        }
    }
    s
}

/// Progress lines on stderr at every tenth of the run.
pub fn progress_printer(label: &'static str) -> impl Fn(usize, usize) + Sync {
    let shown = AtomicUsize::new(0);
    move |done, total| {
        let tenth = (done * 10).checked_div(total).unwrap_or(10);
        if tenth > shown.fetch_max(tenth, Ordering::Relaxed) {
            eprintln!("{label}: {done}/{total} replicates");
        }
    }
}
