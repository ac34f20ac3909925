//! Bounded run queue and the executor draining it.

use std::sync::Arc;

use pmcausal_client::api::RunState;
use pmcausal_core::simulation::{run_experiment, RunOptions};
use tokio::sync::mpsc;

use crate::store::{RunRecord, Store};

pub const QUEUE_CAPACITY: usize = 16;

#[derive(Clone)]
pub struct Queue {
    tx: mpsc::Sender<Arc<RunRecord>>,
}

pub enum Rejected {
    Full,
    Closed,
}

impl Queue {
    pub fn submit(&self, run: Arc<RunRecord>) -> Result<(), Rejected> {
        self.tx.try_send(run).map_err(|e| match e {
            mpsc::error::TrySendError::Full(_) => Rejected::Full,
            mpsc::error::TrySendError::Closed(_) => Rejected::Closed,
        })
    }
}

pub fn start(store: Arc<Store>, capacity: usize, workers: Option<usize>) -> Queue {
    let (tx, mut rx) = mpsc::channel::<Arc<RunRecord>>(capacity.max(1));
    tokio::spawn(async move {
        while let Some(run) = rx.recv().await {
            execute(&store, run, workers).await;
        }
    });
    Queue { tx }
}

async fn execute(store: &Store, run: Arc<RunRecord>, workers: Option<usize>) {
    run.advance(RunState::Running, None);
    tracing::info!(run = %run.id, replicates = run.total(), "run started");
    let job = run.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let progress = |done: usize, _total: usize| job.report_progress(done);
        run_experiment(&job.scenario, &RunOptions { workers }, &progress)
            .map_err(|e| e.to_string())
            .and_then(|r| serde_json::to_vec(&r).map_err(|e| e.to_string()))
    })
    .await;
    match outcome {
        Ok(Ok(payload)) => {
            run.finish(payload);
            tracing::info!(run = %run.id, "run done");
        }
        Ok(Err(e)) => {
            run.advance(RunState::Failed, Some(e.clone()));
            tracing::warn!(run = %run.id, error = %e, "run failed");
        }
        Err(e) => {
            run.advance(RunState::Failed, Some(format!("run aborted: {e}")));
            tracing::warn!(run = %run.id, error = %e, "run aborted");
        }
    }
    store.persist_run(&run);
}
