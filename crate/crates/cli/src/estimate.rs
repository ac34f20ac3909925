use std::fs::File;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use pmcausal_core::estimators::{Estimand, Estimator, Method};
use pmcausal_core::io::read_cohort_csv;
use pmcausal_core::model::restrict_eligible_bound;
use pmcausal_core::study::Study;

use crate::exit::{CliResult, Failure, ESTIMATION, INPUT};
use crate::{output, OutDir, Selection};

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Cohort CSV: unit_id, covariates, arm, version, outcome[, cf__<version>...].
    #[arg(long)]
    cohort: PathBuf,
    /// Study JSON: covariates, arms, algorithm and estimation options.
    #[arg(long)]
    study: PathBuf,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    out: OutDir,
}

pub fn run(args: EstimateArgs) -> CliResult {
    let study = Study::load(&args.study).map_err(|e| Failure::msg(INPUT, format!("{}: {e}", args.study.display())))?;
    let bound = study.bind()?;
    let file = File::open(&args.cohort).map_err(|e| Failure::msg(INPUT, format!("{}: {e}", args.cohort.display())))?;
    let cohort = read_cohort_csv(file, Arc::clone(&bound.schema), Arc::clone(&bound.arms), study.outcome)
        .map_err(|e| Failure::msg(INPUT, format!("{}: {e}", args.cohort.display())))?;
    let eligible = restrict_eligible_bound(&cohort, &bound.algorithm)?;

    let has_cf = eligible.has_counterfactuals();
    let methods = match &args.selection.methods {
        Some(m) => m.clone(),
        None => Method::ALL.iter().copied().filter(|m| has_cf || *m != Method::True).collect(),
    };
    if methods.contains(&Method::True) && !has_cf {
        return Err(Failure::msg(
            ESTIMATION,
            "the oracle method needs counterfactual columns (cf__<version>) in the cohort CSV",
        ));
    }
    let estimands = args.selection.estimands.clone().unwrap_or_else(|| Estimand::ALL.to_vec());

    let estimator = Estimator::new(&eligible, &bound.algorithm, &study.estimation)?;
    let report = estimator.report(&estimands, &methods);
    output::write_report(&args.out.out, &report)?;
    print!("{}", output::report_table(&report));

    let failed: Vec<String> = report
        .estimates
        .iter()
        .flat_map(|(e, row)| row.iter().filter(|(_, c)| c.error.is_some()).map(move |(m, _)| format!("{e}/{m}")))
        .collect();
    if !failed.is_empty() {
        return Err(Failure::msg(ESTIMATION, format!("estimation failed for {}", failed.join(", "))));
    }
    Ok(())
}
