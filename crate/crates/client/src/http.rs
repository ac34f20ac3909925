use std::time::Duration;

use pmcausal_core::simulation::{ExperimentResult, Scenario};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;

use crate::api::{ApiError, CreateRun, Health, Presets, RunHandle, RunState, ScenarioCreated, ScenarioSummary};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server returned {status}: {}", .body.error)]
    Api { status: StatusCode, body: ApiError },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("run {run_id} failed: {reason}")]
    RunFailed { run_id: String, reason: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ApiError {
            error: text,
            fields: Vec::new(),
        });
        Err(ClientError::Api { status, body })
    }

    pub async fn health(&self) -> Result<Health> {
        Self::decode(self.http.get(self.url("/health")).send().await?).await
    }

    pub async fn presets(&self) -> Result<Presets> {
        Self::decode(self.http.get(self.url("/presets")).send().await?).await
    }

    pub async fn create_scenario(&self, scenario: &Scenario) -> Result<String> {
        let created: ScenarioCreated =
            Self::decode(self.http.post(self.url("/scenarios")).json(scenario).send().await?).await?;
        Ok(created.scenario_id)
    }

    pub async fn scenarios(&self) -> Result<Vec<ScenarioSummary>> {
        Self::decode(self.http.get(self.url("/scenarios")).send().await?).await
    }

    pub async fn scenario(&self, id: &str) -> Result<Scenario> {
        Self::decode(self.http.get(self.url(&format!("/scenarios/{id}"))).send().await?).await
    }

    pub async fn create_run(&self, request: &CreateRun) -> Result<RunHandle> {
        Self::decode(self.http.post(self.url("/runs")).json(request).send().await?).await
    }

    pub async fn run(&self, id: &str) -> Result<RunHandle> {
        Self::decode(self.http.get(self.url(&format!("/runs/{id}"))).send().await?).await
    }

    /// Raw result payload, exactly as the server stored it.
    pub async fn result_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let resp = self.http.get(self.url(&format!("/runs/{id}/result"))).send().await?;
        if !resp.status().is_success() {
            return Self::decode::<()>(resp).await.map(|_| Vec::new());
        }
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn result(&self, id: &str) -> Result<ExperimentResult> {
        Self::decode(self.http.get(self.url(&format!("/runs/{id}/result"))).send().await?).await
    }

    /// Polls until the run finishes, reporting each handle seen.
    pub async fn wait(&self, id: &str, interval: Duration, mut on_poll: impl FnMut(&RunHandle)) -> Result<RunHandle> {
        loop {
            let h = self.run(id).await?;
            on_poll(&h);
            match h.state {
                RunState::Done => return Ok(h),
                RunState::Failed => {
                    return Err(ClientError::RunFailed {
                        run_id: h.run_id,
                        reason: h.error.unwrap_or_default(),
                    })
                }
                _ => tokio::time::sleep(interval).await,
            }
        }
    }
}
