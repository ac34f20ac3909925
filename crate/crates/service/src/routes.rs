use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pmcausal_client::api::{
    ApiError, CreateRun, FieldError, Health, Presets, RunHandle, RunState, ScenarioCreated, ScenarioSummary,
};
use pmcausal_core::simulation::Scenario;
use pmcausal_core::Error as CoreError;

use crate::runner::Rejected;
use crate::store::RunRecord;
use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/presets", get(presets))
        .route("/scenarios", post(create_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/result", get(get_result))
        .with_state(state)
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Failure(
            status,
            ApiError {
                error: error.into(),
                fields: Vec::new(),
            },
        )
    }

    fn invalid(e: &CoreError) -> Self {
        let fields = match e {
            CoreError::Validation { field, message } => vec![FieldError {
                field: field.clone(),
                message: message.clone(),
            }],
            _ => Vec::new(),
        };
        Failure(
            StatusCode::BAD_REQUEST,
            ApiError {
                error: e.to_string(),
                fields,
            },
        )
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, Failure>;

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn presets() -> Json<Presets> {
    Json(
        [("main", Scenario::main()), ("uniform", Scenario::uniform())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    )
}

fn utf8(body: &Bytes) -> ApiResult<&str> {
    std::str::from_utf8(body).map_err(|_| Failure::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))
}

async fn create_scenario(State(st): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<ScenarioCreated>)> {
    let scenario = Scenario::from_json(utf8(&body)?).map_err(|e| Failure::invalid(&e))?;
    let id = st
        .store
        .add_scenario(scenario)
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, format!("could not store scenario: {e}")))?;
    Ok((StatusCode::CREATED, Json(ScenarioCreated { scenario_id: id })))
}

async fn list_scenarios(State(st): State<AppState>) -> Json<Vec<ScenarioSummary>> {
    Json(
        st.store
            .scenarios()
            .into_iter()
            .map(|(id, s)| ScenarioSummary {
                scenario_id: id,
                name: s.study.name.clone(),
            })
            .collect(),
    )
}

async fn get_scenario(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Scenario>> {
    st.store
        .scenario(&id)
        .map(|s| Json((*s).clone()))
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("unknown scenario {id}")))
}

async fn create_run(State(st): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<RunHandle>)> {
    let req: CreateRun = serde_json::from_str(utf8(&body)?).map_err(|e| Failure::invalid(&CoreError::from(e)))?;
    let base = st
        .store
        .scenario(&req.scenario_id)
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("unknown scenario {}", req.scenario_id)))?;
    let mut scenario = (*base).clone();
    let sim = &mut scenario.simulation;
    let o = &req.overrides;
    if let Some(v) = o.n_replicates {
        sim.n_replicates = v;
    }
    if let Some(v) = o.cohort_size {
        sim.cohort_size = v;
    }
    if let Some(v) = o.superpop_size {
        sim.superpop_size = v;
    }
    if let Some(v) = o.master_seed {
        sim.master_seed = v;
    }
    if let Some(m) = req.methods {
        sim.methods = m;
    }
    if let Some(e) = req.estimands {
        sim.estimands = e;
    }
    scenario.validate().map_err(|e| Failure::invalid(&e))?;
    let run = Arc::new(RunRecord::new(req.scenario_id, scenario));
    match st.queue.submit(run.clone()) {
        Ok(()) => {}
        Err(Rejected::Full) => return Err(Failure::new(StatusCode::CONFLICT, "run queue is full; retry later")),
        Err(Rejected::Closed) => return Err(Failure::new(StatusCode::SERVICE_UNAVAILABLE, "executor stopped")),
    }
    st.store.add_run(run.clone());
    st.store.persist_run(&run);
    Ok((StatusCode::ACCEPTED, Json(run.handle())))
}

async fn list_runs(State(st): State<AppState>) -> Json<Vec<RunHandle>> {
    Json(st.store.runs().iter().map(|r| r.handle()).collect())
}

fn find_run(st: &AppState, id: &str) -> ApiResult<Arc<RunRecord>> {
    st.store
        .run(id)
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("unknown run {id}")))
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RunHandle>> {
    Ok(Json(find_run(&st, &id)?.handle()))
}

async fn get_result(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = find_run(&st, &id)?;
    match (run.state(), run.result()) {
        (RunState::Done, Some(bytes)) => {
            Ok(([(header::CONTENT_TYPE, "application/json")], (*bytes).clone()).into_response())
        }
        (RunState::Failed, _) => Err(Failure::new(
            StatusCode::CONFLICT,
            format!("run failed: {}", run.handle().error.unwrap_or_default()),
        )),
        (state, _) => Err(Failure::new(
            StatusCode::CONFLICT,
            format!("run is {}; result not available yet", serde_json::to_value(state).unwrap_or_default().as_str().unwrap_or("pending")),
        )),
    }
}
