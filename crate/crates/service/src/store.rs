//! In-memory registry with optional append-only JSON persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use pmcausal_client::api::{Progress, RunHandle, RunState};
use pmcausal_core::simulation::Scenario;

pub struct RunRecord {
    pub id: String,
    pub scenario_id: String,
    pub created_at: u64,
    pub scenario: Scenario,
    state: Mutex<(RunState, Option<String>)>,
    completed: AtomicUsize,
    result: OnceLock<Arc<Vec<u8>>>,
}

impl RunRecord {
    pub fn new(scenario_id: String, scenario: Scenario) -> Self {
        RunRecord {
            id: uuid::Uuid::new_v4().simple().to_string(),
            scenario_id,
            created_at: now_ms(),
            scenario,
            state: Mutex::new((RunState::Queued, None)),
            completed: AtomicUsize::new(0),
            result: OnceLock::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.scenario.simulation.n_replicates
    }

    pub fn state(&self) -> RunState {
        self.state.lock().expect("state lock").0
    }

    /// Moves forward only; a finished run never changes again.
    pub fn advance(&self, to: RunState, error: Option<String>) -> bool {
        let mut s = self.state.lock().expect("state lock");
        if s.0 >= to || s.0.is_finished() {
            return false;
        }
        *s = (to, error);
        true
    }

    pub fn report_progress(&self, completed: usize) {
        self.completed.fetch_max(completed, Ordering::Relaxed);
    }

    pub fn finish(&self, payload: Vec<u8>) {
        if self.result.set(Arc::new(payload)).is_ok() {
            self.completed.store(self.total(), Ordering::Relaxed);
            self.advance(RunState::Done, None);
        }
    }

    pub fn result(&self) -> Option<Arc<Vec<u8>>> {
        self.result.get().cloned()
    }

    pub fn handle(&self) -> RunHandle {
        let (state, error) = self.state.lock().expect("state lock").clone();
        RunHandle {
            run_id: self.id.clone(),
            scenario_id: self.scenario_id.clone(),
            state,
            progress: Progress {
                completed: self.completed.load(Ordering::Relaxed),
                total: self.total(),
            },
            created_at: self.created_at,
            error,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct Store {
    dir: Option<PathBuf>,
    scenarios: RwLock<BTreeMap<String, Arc<Scenario>>>,
    runs: RwLock<BTreeMap<String, Arc<RunRecord>>>,
}

fn write_new(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn json_files(dir: &Path) -> std::io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Store {
    /// Loads previously persisted scenarios and finished runs from `dir`.
    pub fn open(dir: Option<PathBuf>) -> std::io::Result<Self> {
        let store = Store {
            dir,
            scenarios: RwLock::default(),
            runs: RwLock::default(),
        };
        let Some(dir) = &store.dir else {
            return Ok(store);
        };
        std::fs::create_dir_all(dir)?;
        for (id, path) in json_files(&dir.join("scenarios"))? {
            match Scenario::from_json(&std::fs::read_to_string(&path)?) {
                Ok(s) => {
                    store.scenarios.write().expect("lock").insert(id, Arc::new(s));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping stored scenario"),
            }
        }
        for (id, path) in json_files(&dir.join("runs"))? {
            let handle: RunHandle = match serde_json::from_slice(&std::fs::read(&path)?) {
                Ok(h) => h,
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "skipping stored run");
                    continue;
                }
            };
            let Some(scenario) = store.scenario(&handle.scenario_id) else { continue };
            let mut scenario = (*scenario).clone();
            scenario.simulation.n_replicates = handle.progress.total;
            let rec = RunRecord {
                id: id.clone(),
                scenario_id: handle.scenario_id.clone(),
                created_at: handle.created_at,
                scenario,
                state: Mutex::new((handle.state, handle.error.clone())),
                completed: AtomicUsize::new(handle.progress.completed),
                result: OnceLock::new(),
            };
            if handle.state == RunState::Done {
                let result_path = dir.join("results").join(format!("{id}.json"));
                match std::fs::read(&result_path) {
                    Ok(bytes) => {
                        let _ = rec.result.set(Arc::new(bytes));
                    }
                    Err(_) => continue,
                }
            } else if !handle.state.is_finished() {
                // Interrupted by a restart.
                *rec.state.lock().expect("lock") = (RunState::Failed, Some("service restarted before completion".into()));
            }
            store.runs.write().expect("lock").insert(id, Arc::new(rec));
        }
        Ok(store)
    }

    pub fn add_scenario(&self, scenario: Scenario) -> std::io::Result<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        if let Some(dir) = &self.dir {
            let bytes = serde_json::to_vec_pretty(&scenario).map_err(std::io::Error::other)?;
            write_new(&dir.join("scenarios").join(format!("{id}.json")), &bytes)?;
        }
        self.scenarios.write().expect("lock").insert(id.clone(), Arc::new(scenario));
        Ok(id)
    }

    pub fn scenario(&self, id: &str) -> Option<Arc<Scenario>> {
        self.scenarios.read().expect("lock").get(id).cloned()
    }

    pub fn scenarios(&self) -> Vec<(String, Arc<Scenario>)> {
        self.scenarios.read().expect("lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn add_run(&self, run: Arc<RunRecord>) {
        self.runs.write().expect("lock").insert(run.id.clone(), run);
    }

    pub fn run(&self, id: &str) -> Option<Arc<RunRecord>> {
        self.runs.read().expect("lock").get(id).cloned()
    }

    pub fn runs(&self) -> Vec<Arc<RunRecord>> {
        let mut v: Vec<_> = self.runs.read().expect("lock").values().cloned().collect();
        v.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        v
    }

    /// Records a finished run on disk. Failures are logged, not fatal.
    pub fn persist_run(&self, run: &RunRecord) {
        let Some(dir) = &self.dir else { return };
        let mut res = Ok(());
        if let Some(bytes) = run.result() {
            res = write_new(&dir.join("results").join(format!("{}.json", run.id)), &bytes);
        }
        let res = res.and_then(|_| {
            let handle = serde_json::to_vec_pretty(&run.handle()).map_err(std::io::Error::other)?;
            write_new(&dir.join("runs").join(format!("{}.json", run.id)), &handle)
        });
        if let Err(e) = res {
            tracing::warn!(run = %run.id, error = %e, "could not persist run");
        }
    }
}
