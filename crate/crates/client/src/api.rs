//! Wire types of the HTTP API.

use std::collections::BTreeMap;

use pmcausal_core::estimators::{Estimand, Method};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCreated {
    pub scenario_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub name: String,
}

/// Fields of the scenario's simulation block a run may replace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superpop_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateRun {
    pub scenario_id: String,
    /// Defaults to the scenario's own selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimands: Option<Vec<Estimand>>,
    #[serde(default)]
    pub overrides: RunOverrides,
}

impl CreateRun {
    pub fn new(scenario_id: impl Into<String>) -> Self {
        CreateRun {
            scenario_id: scenario_id.into(),
            methods: None,
            estimands: None,
            overrides: RunOverrides::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Queued,
    Running,
    Done,
    Failed,
}

impl RunState {
    pub fn is_finished(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub scenario_id: String,
    pub state: RunState,
    pub progress: Progress,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

/// Bundled scenarios, keyed by preset name.
pub type Presets = BTreeMap<String, pmcausal_core::simulation::Scenario>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_state_wire_names_and_order() {
        assert_eq!(serde_json::to_string(&RunState::Running).unwrap(), r#""running""#);
        assert!(RunState::Queued < RunState::Running && RunState::Running < RunState::Done);
        assert!(RunState::Failed.is_finished() && !RunState::Queued.is_finished());
    }

    #[test]
    fn create_run_round_trip() {
        let req: CreateRun =
            serde_json::from_str(r#"{"scenario_id":"a","methods":["std"],"overrides":{"n_replicates":5}}"#).unwrap();
        assert_eq!(req.methods, Some(vec![Method::Std]));
        assert_eq!(req.overrides.n_replicates, Some(5));
        assert_eq!(serde_json::from_str::<CreateRun>(&serde_json::to_string(&req).unwrap()).unwrap(), req);
        assert_eq!(
            serde_json::to_string(&CreateRun::new("x")).unwrap(),
            r#"{"scenario_id":"x","overrides":{}}"#
        );
    }

    #[test]
    fn unknown_override_is_rejected() {
        assert!(serde_json::from_str::<CreateRun>(r#"{"scenario_id":"a","overrides":{"seed":1}}"#).is_err());
    }
}
