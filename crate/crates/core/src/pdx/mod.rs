//! Patient-derived xenograft screens: every tumour model is tested with
//! several drugs, so all counterfactual responses are known and masking all
//! but one emulates an observational cohort.

mod experiment;
mod load;
pub mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimationConfig, ModelSpec, PositivityPolicy};
use crate::forest::ForestConfig;
use crate::model::{ArmSpec, CovariateDef, OutcomeKind, PmAlgorithm, Schema, VersionDistribution, VersionId};
use crate::study::Study;

pub use experiment::{
    pdx_cohort, run_pdx_experiment, synthetic_pdx, PdxAssignment, PdxExperimentSpec, SyntheticPdx,
};
pub use load::{load_pdx, load_pdx_files, ResponseSource};
pub use metrics::{Denominator, ResponseCategory, ResponseMetrics, ResponseThresholds, VolumeSeries};

pub const CONTROL_DRUG: &str = "LEE011";
pub const MEK_DRUG: &str = "binimetinib";
pub const PI3K_DRUG: &str = "BYL719";
pub const DRUGS: [&str; 3] = [CONTROL_DRUG, MEK_DRUG, PI3K_DRUG];
pub const MUTATIONS: [&str; 4] = ["KRAS", "BRAF", "PIK3CA", "PTEN"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DrugResponse {
    pub best_response: Option<f64>,
    pub best_average_response: Option<f64>,
    pub responder: Option<bool>,
}

impl DrugResponse {
    pub fn outcome(&self, kind: OutcomeKind) -> Option<f64> {
        match kind {
            OutcomeKind::Continuous => self.best_average_response,
            OutcomeKind::Binary => self.responder.map(f64::from),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdxModelRecord {
    pub model_id: String,
    pub tissue: String,
    /// 0/1 status keyed by gene, for every entry of [`MUTATIONS`].
    pub mutations: BTreeMap<String, u8>,
    pub responses: BTreeMap<String, DrugResponse>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl PdxModelRecord {
    pub fn mutation(&self, gene: &str) -> u8 {
        self.mutations.get(gene).copied().unwrap_or(0)
    }

    /// True when every drug of the study has the requested outcome.
    pub fn is_complete(&self, kind: OutcomeKind) -> bool {
        DRUGS
            .iter()
            .all(|d| self.responses.get(*d).and_then(|r| r.outcome(kind)).is_some())
    }
}

/// Which biomarker wins for tumours mutated in both pathways.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    #[default]
    Mek,
    Pi3k,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdxConfig {
    pub denominator: Denominator,
    pub thresholds: ResponseThresholds,
    pub precedence: Precedence,
}

/// KRAS or BRAF mutated → binimetinib, PIK3CA mutated → BYL719, otherwise
/// ineligible. PTEN is an adjustment covariate only.
pub fn pdx_algorithm(precedence: Precedence) -> PmAlgorithm {
    let mek = PmAlgorithm::new(Vec::new())
        .rule(&[("KRAS", 1.0)], MEK_DRUG)
        .rule(&[("BRAF", 1.0)], MEK_DRUG);
    match precedence {
        Precedence::Mek => mek.rule(&[("PIK3CA", 1.0)], PI3K_DRUG),
        Precedence::Pi3k => {
            let mut a = PmAlgorithm::new(Vec::new()).rule(&[("PIK3CA", 1.0)], PI3K_DRUG);
            a.rules.extend(mek.rules);
            a
        }
    }
}

/// The study used for PDX analyses: forests for every nuisance model,
/// positivity problems flagged rather than fatal, and a uniform physician.
pub fn pdx_study(config: &PdxConfig, outcome: OutcomeKind) -> Study {
    let schema = Schema::new(MUTATIONS.iter().map(|m| CovariateDef::binary(*m)).collect()).expect("static schema");
    let arms = ArmSpec::new(vec![VersionId::new(CONTROL_DRUG)], vec![VersionId::new(MEK_DRUG), VersionId::new(PI3K_DRUG)])
        .expect("static arms");
    let mut estimation = EstimationConfig {
        outcome_model: Some(ModelSpec::Forest(ForestConfig::default())),
        treatment_model: Some(ModelSpec::Forest(ForestConfig::default())),
        physician: Some(VersionDistribution::Uniform),
        ..Default::default()
    };
    estimation.positivity.policy = PositivityPolicy::Flag;
    Study {
        name: match outcome {
            OutcomeKind::Continuous => "pdx".into(),
            OutcomeKind::Binary => "pdx-binary".into(),
        },
        covariates: schema,
        arms,
        algorithm: pdx_algorithm(config.precedence),
        outcome,
        estimation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_decisions() {
        let study = pdx_study(&PdxConfig::default(), OutcomeKind::Continuous);
        let b = study.bind().unwrap();
        let rec = |k, br, p| b.algorithm.recommend(&[k, br, p, 0.0]).map(|i| b.arms.version(i).as_str().to_string());
        assert_eq!(rec(1.0, 0.0, 1.0).as_deref(), Some(MEK_DRUG));
        assert_eq!(rec(0.0, 1.0, 0.0).as_deref(), Some(MEK_DRUG));
        assert_eq!(rec(0.0, 0.0, 1.0).as_deref(), Some(PI3K_DRUG));
        assert_eq!(rec(0.0, 0.0, 0.0), None);
        let cfg = PdxConfig {
            precedence: Precedence::Pi3k,
            ..Default::default()
        };
        let b = pdx_study(&cfg, OutcomeKind::Continuous).bind().unwrap();
        assert_eq!(b.algorithm.recommend(&[1.0, 0.0, 1.0, 0.0]), Some(2));
    }
}
