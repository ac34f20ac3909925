use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use pmcausal_client::api::CreateRun;
use pmcausal_client::{Client, ClientError};
use pmcausal_core::simulation::{run_experiment, ExperimentResult, RunOptions, Scenario};

use crate::exit::{CliResult, Failure, ESTIMATION, INPUT, OTHER};
use crate::{output, OutDir, Outcome, Selection};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Bundled scenario: main or uniform.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampled cohorts.
    #[arg(long)]
    replicates: Option<usize>,
    /// Units drawn per cohort before the eligibility restriction.
    #[arg(long)]
    cohort: Option<usize>,
    /// Super-population size.
    #[arg(long)]
    superpop: Option<usize>,
    #[arg(long, value_enum)]
    outcome: Option<Outcome>,
    /// Worker threads for the replicates (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Run on a pmcausal service instead of in-process, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    server: Option<String>,
    #[command(flatten)]
    selection: Selection,
    #[command(flatten)]
    out: OutDir,
}

fn load(args: &SimulateArgs) -> CliResult<Scenario> {
    let mut s = match (&args.scenario, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::msg(INPUT, format!("{}: {e}", path.display())))?;
            Scenario::from_json(&text).map_err(|e| Failure::msg(INPUT, format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => Scenario::preset(name)
            .ok_or_else(|| Failure::msg(INPUT, format!("unknown preset {name:?} (expected main or uniform)")))?,
        (None, None) => unreachable!("clap requires one"),
    };
    let sim = &mut s.simulation;
    if let Some(v) = args.seed {
        sim.master_seed = v;
    }
    if let Some(v) = args.replicates {
        sim.n_replicates = v;
    }
    if let Some(v) = args.cohort {
        sim.cohort_size = v;
    }
    if let Some(v) = args.superpop {
        sim.superpop_size = v;
    }
    if let Some(m) = &args.selection.methods {
        sim.methods = m.clone();
    }
    if let Some(e) = &args.selection.estimands {
        sim.estimands = e.clone();
    }
    if let Some(o) = args.outcome {
        s.study.outcome = o.into();
    }
    s.validate()?;
    Ok(s)
}

pub fn run(args: SimulateArgs) -> CliResult {
    let scenario = load(&args)?;
    let (payload, result) = match &args.server {
        None => {
            let options = RunOptions { workers: args.workers };
            let result = run_experiment(&scenario, &options, &output::progress_printer("simulate"))?;
            let payload = serde_json::to_vec(&result).map_err(|e| Failure::new(OTHER, e))?;
            (payload, result)
        }
        Some(url) => {
            if args.workers.is_some() {
                eprintln!("note: --workers is ignored with --server; the service sets its own");
            }
            remote(url, &scenario)?
        }
    };
    output::write_experiment(&args.out.out, &payload, &result)?;
    print!("{}", output::experiment_table(&result));
    Ok(())
}

fn client_failure(e: ClientError) -> Failure {
    let code = match &e {
        ClientError::Api { status, .. } if status.as_u16() == 400 => INPUT,
        ClientError::RunFailed { .. } => ESTIMATION,
        _ => OTHER,
    };
    Failure::new(code, e)
}

fn remote(url: &str, scenario: &Scenario) -> CliResult<(Vec<u8>, ExperimentResult)> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(OTHER, e))?;
    rt.block_on(async {
        let client = Client::new(url);
        let id = client.create_scenario(scenario).await.map_err(client_failure)?;
        let handle = client.create_run(&CreateRun::new(id)).await.map_err(client_failure)?;
        eprintln!("run {} queued on {url}", handle.run_id);
        let progress = output::progress_printer("simulate");
        client
            .wait(&handle.run_id, Duration::from_millis(250), |h| {
                progress(h.progress.completed, h.progress.total)
            })
            .await
            .map_err(client_failure)?;
        let payload = client.result_bytes(&handle.run_id).await.map_err(client_failure)?;
        let result = serde_json::from_slice(&payload).map_err(|e| Failure::new(OTHER, e))?;
        Ok((payload, result))
    })
}
