use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pmcausal_core::pdx::{
    load_pdx_files, pdx_cohort, pdx_study, run_pdx_experiment, synthetic_pdx, Denominator, PdxAssignment, PdxConfig,
    PdxExperimentSpec, Precedence, ResponseThresholds, SyntheticPdx,
};
use pmcausal_core::simulation::RunOptions;

use crate::exit::{CliResult, Failure, ESTIMATION, INPUT, OTHER};
use crate::{output, OutDir, Outcome, Selection};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DenominatorArg {
    /// 100 (V_t - V_0) / V_t
    Current,
    /// 100 (V_t - V_0) / V_0
    Baseline,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecedenceArg {
    /// KRAS/BRAF and PIK3CA double mutants get binimetinib.
    Mek,
    /// Double mutants get BYL719.
    Pi3k,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AssignmentArg {
    /// Observed drug drawn uniformly per model.
    Uniform,
    /// Observed drug is the algorithm's recommendation.
    Rule,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["responses", "volumes", "synthetic"]))]
pub struct PdxArgs {
    /// models.csv: model_id, tissue, KRAS, BRAF, PIK3CA, PTEN.
    #[arg(long, required_unless_present = "synthetic")]
    models: Option<PathBuf>,
    /// Precomputed responses: model_id, drug, best_average_response, responder[, best_response].
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Raw volume series: model_id, drug, day, volume_mm3.
    #[arg(long)]
    volumes: Option<PathBuf>,
    /// Use the built-in synthetic screen (88 eligible models, planted CE1 of -30).
    #[arg(long, conflicts_with = "models")]
    synthetic: bool,
    /// Sampled cohorts.
    #[arg(long, visible_alias = "reps", default_value_t = 1000)]
    replicates: usize,
    /// Models per cohort.
    #[arg(long, default_value_t = 70)]
    cohort: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "continuous")]
    outcome: Outcome,
    /// Tumour volume change denominator.
    #[arg(long, value_enum, default_value = "current")]
    denominator: DenominatorArg,
    /// Response category thresholds JSON (default: bundled mRECIST-style cutoffs).
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mek")]
    precedence: PrecedenceArg,
    #[arg(long, value_enum, default_value = "uniform")]
    assignment: AssignmentArg,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    out: OutDir,
}

fn config(args: &PdxArgs) -> CliResult<PdxConfig> {
    let thresholds = match &args.thresholds {
        None => ResponseThresholds::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::msg(INPUT, format!("{}: {e}", p.display())))?;
            let t: ResponseThresholds =
                serde_json::from_str(&text).map_err(|e| Failure::msg(INPUT, format!("{}: {e}", p.display())))?;
            t.validate()?;
            t
        }
    };
    Ok(PdxConfig {
        denominator: match args.denominator {
            DenominatorArg::Current => Denominator::Current,
            DenominatorArg::Baseline => Denominator::Baseline,
        },
        thresholds,
        precedence: match args.precedence {
            PrecedenceArg::Mek => Precedence::Mek,
            PrecedenceArg::Pi3k => Precedence::Pi3k,
        },
    })
}

pub fn run(args: PdxArgs) -> CliResult {
    let config = config(&args)?;
    let records = if args.synthetic {
        synthetic_pdx(&SyntheticPdx::default())?
    } else {
        let models = args.models.as_deref().expect("clap requires models");
        load_pdx_files(models, args.responses.as_deref(), args.volumes.as_deref(), &config)?
    };
    for r in &records {
        for f in &r.flags {
            tracing::warn!(model = %r.model_id, "{f}");
        }
    }
    let outcome = args.outcome.into();
    let bound = pdx_study(&config, outcome).bind()?;
    let eligible = pdx_cohort(&records, &bound, outcome)?.len();
    if eligible < args.cohort {
        return Err(Failure::msg(
            ESTIMATION,
            format!("only {eligible} eligible models with complete responses; --cohort is {}", args.cohort),
        ));
    }
    let defaults = PdxExperimentSpec::default();
    let spec = PdxExperimentSpec {
        n_replicates: args.replicates,
        cohort_size: args.cohort,
        master_seed: args.seed,
        outcome,
        methods: args.selection.methods.clone().unwrap_or(defaults.methods),
        estimands: args.selection.estimands.clone().unwrap_or(defaults.estimands),
        assignment: match args.assignment {
            AssignmentArg::Uniform => PdxAssignment::Uniform,
            AssignmentArg::Rule => PdxAssignment::Rule,
        },
        estimation: None,
    };
    let options = RunOptions { workers: args.workers };
    let result = run_pdx_experiment(&records, &config, &spec, &options, &output::progress_printer("pdx"))?;
    let payload = serde_json::to_vec(&result).map_err(|e| Failure::new(OTHER, e))?;
    output::write_experiment(&args.out.out, &payload, &result)?;
    print!("{}", output::experiment_table(&result));
    Ok(())
}
