//! Mask-and-estimate emulation on PDX records.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{pdx_study, DrugResponse, PdxConfig, PdxModelRecord, DRUGS, MUTATIONS};
use crate::error::{Error, Result};
use crate::estimators::{Estimand, EstimationConfig, Method};
use crate::model::{restrict_eligible_bound, CohortTable, OutcomeKind, UnitRecord};
use crate::simulation::{
    execute, sample_indices, stream_rng, ExperimentResult, Plan, RunOptions, STREAM_REPLICATE_ASSIGN_BASE,
};
use crate::study::BoundStudy;

/// How the single observed drug of a sampled model is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdxAssignment {
    /// Each drug with probability 1/3.
    #[default]
    Uniform,
    /// The algorithm's recommendation; nothing of the PM arm is masked.
    Rule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdxExperimentSpec {
    pub n_replicates: usize,
    pub cohort_size: usize,
    pub master_seed: u64,
    pub outcome: OutcomeKind,
    pub methods: Vec<Method>,
    pub estimands: Vec<Estimand>,
    pub assignment: PdxAssignment,
    /// Replaces the forest-based defaults.
    pub estimation: Option<EstimationConfig>,
}

impl Default for PdxExperimentSpec {
    fn default() -> Self {
        PdxExperimentSpec {
            n_replicates: 1000,
            cohort_size: 70,
            master_seed: 0,
            outcome: OutcomeKind::Continuous,
            methods: Method::ALL.to_vec(),
            estimands: Estimand::ALL.to_vec(),
            assignment: PdxAssignment::Uniform,
            estimation: None,
        }
    }
}

/// Eligible, complete records as units with every drug's response as a
/// counterfactual and nothing observed.
pub fn pdx_cohort(records: &[PdxModelRecord], bound: &BoundStudy, outcome: OutcomeKind) -> Result<CohortTable> {
    let units = records
        .iter()
        .filter(|r| r.is_complete(outcome))
        .map(|r| UnitRecord {
            unit_id: r.model_id.clone(),
            covariates: MUTATIONS.iter().map(|m| f64::from(r.mutation(m))).collect(),
            arm: None,
            version: None,
            outcome: None,
            counterfactuals: Some(
                bound
                    .arms
                    .versions()
                    .map(|v| r.responses.get(v.as_str()).and_then(|x| x.outcome(outcome)))
                    .collect(),
            ),
        })
        .collect();
    let all = CohortTable::new(bound.schema.clone(), bound.arms.clone(), outcome, units)?;
    restrict_eligible_bound(&all, &bound.algorithm)
}

/// Samples `cohort_size` eligible models per replicate, reveals one drug's
/// response each, and scores the estimators against the full eligible set.
pub fn run_pdx_experiment(
    records: &[PdxModelRecord],
    config: &PdxConfig,
    spec: &PdxExperimentSpec,
    options: &RunOptions,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<ExperimentResult> {
    if spec.n_replicates == 0 {
        return Err(Error::validation("n_replicates", "must be positive"));
    }
    let mut study = pdx_study(config, spec.outcome);
    if let Some(e) = &spec.estimation {
        study.estimation = e.clone();
    }
    study.validate()?;
    let bound = study.bind()?;
    let population = pdx_cohort(records, &bound, spec.outcome)?;
    if population.len() < spec.cohort_size || spec.cohort_size == 0 {
        return Err(Error::validation(
            "cohort_size",
            format!(
                "{} must be in 1..={} (eligible complete models)",
                spec.cohort_size,
                population.len()
            ),
        ));
    }
    let nv = bound.arms.n_versions();
    let plan = Plan {
        name: study.name.clone(),
        master_seed: spec.master_seed,
        n_replicates: spec.n_replicates,
        cohort_size: spec.cohort_size,
        superpop_size: population.len(),
        truth_population: &population,
        bound: &bound,
        config: &study.estimation,
        methods: &spec.methods,
        estimands: &spec.estimands,
    };
    execute(&plan, options, progress, &|r| {
        let idx = sample_indices(population.len(), spec.cohort_size, spec.master_seed, r)?;
        let mut rng = stream_rng(spec.master_seed, STREAM_REPLICATE_ASSIGN_BASE + r as u64);
        let units = idx
            .iter()
            .map(|&i| {
                let u = &population.units()[i];
                let k = match spec.assignment {
                    PdxAssignment::Uniform => rng.random_range(0..nv),
                    PdxAssignment::Rule => bound.algorithm.recommend(&u.covariates).expect("eligible"),
                };
                let cf = u.counterfactuals.as_ref().expect("population carries counterfactuals");
                UnitRecord {
                    arm: Some(bound.arms.arm_of(k)),
                    version: Some(k),
                    outcome: cf[k],
                    ..u.clone()
                }
            })
            .collect();
        CohortTable::new(population.schema_arc().clone(), population.arm_spec_arc().clone(), spec.outcome, units)
    })
}

/// A screen-like fixture with a planted effect: the biomarker-matched drug
/// lowers Best Average Response by `effect` relative to the reference drug,
/// so CE1 is `-effect` in expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPdx {
    /// Eligible models generated.
    pub n_models: usize,
    pub effect: f64,
    /// Mean and spread of a model's response without any targeted effect.
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Added to every drug's response for PTEN-mutated models.
    pub pten_effect: f64,
    /// Drug-level noise around the model baseline.
    pub noise_sd: f64,
    pub prevalences: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for SyntheticPdx {
    fn default() -> Self {
        SyntheticPdx {
            n_models: 88,
            effect: 30.0,
            baseline_mean: 25.0,
            baseline_sd: 10.0,
            pten_effect: 20.0,
            noise_sd: 10.0,
            prevalences: [("KRAS", 0.35), ("BRAF", 0.15), ("PIK3CA", 0.3), ("PTEN", 0.25)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            seed: 7,
        }
    }
}

/// Responder status uses the stable-disease cutoff on Best Average Response.
const SYNTHETIC_RESPONDER_MAX: f64 = 30.0;

pub fn synthetic_pdx(spec: &SyntheticPdx) -> Result<Vec<PdxModelRecord>> {
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::validation("synthetic_pdx", e.to_string()));
    let (base, noise) = (normal(spec.baseline_sd)?, normal(spec.noise_sd)?);
    let mut rng = stream_rng(spec.seed, 0);
    let mut out = Vec::with_capacity(spec.n_models);
    let mut drawn = 0usize;
    while out.len() < spec.n_models {
        drawn += 1;
        if drawn > 1000 * spec.n_models.max(1) {
            return Err(Error::validation("prevalences", "eligible models are too rare"));
        }
        let mutations: BTreeMap<String, u8> = MUTATIONS
            .iter()
            .map(|m| {
                let p = spec.prevalences.get(*m).copied().unwrap_or(0.0);
                (m.to_string(), u8::from(rng.random::<f64>() < p))
            })
            .collect();
        let mek = mutations["KRAS"] == 1 || mutations["BRAF"] == 1;
        let pi3k = mutations["PIK3CA"] == 1;
        if !(mek || pi3k) {
            continue;
        }
        let b = spec.baseline_mean + base.sample(&mut rng) + spec.pten_effect * f64::from(mutations["PTEN"]);
        let gains = [0.0, if mek { spec.effect } else { 0.0 }, if pi3k { spec.effect } else { 0.0 }];
        let responses = DRUGS
            .iter()
            .zip(gains)
            .map(|(d, g)| {
                let bar = b - g + noise.sample(&mut rng);
                (
                    d.to_string(),
                    DrugResponse {
                        best_response: None,
                        best_average_response: Some(bar),
                        responder: Some(bar <= SYNTHETIC_RESPONDER_MAX),
                    },
                )
            })
            .collect();
        out.push(PdxModelRecord {
            model_id: format!("SYN{:03}", out.len() + 1),
            tissue: "synthetic".into(),
            mutations,
            responses,
            flags: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ModelSpec;
    use crate::forest::ForestConfig;

    fn quick_estimation() -> EstimationConfig {
        let mut e = pdx_study(&PdxConfig::default(), OutcomeKind::Continuous).estimation;
        let f = ForestConfig {
            n_trees: 50,
            ..Default::default()
        };
        e.outcome_model = Some(ModelSpec::Forest(f.clone()));
        e.treatment_model = Some(ModelSpec::Forest(f));
        e
    }

    #[test]
    fn synthetic_records_are_eligible_and_complete() {
        let recs = synthetic_pdx(&SyntheticPdx::default()).unwrap();
        assert_eq!(recs.len(), 88);
        let b = pdx_study(&PdxConfig::default(), OutcomeKind::Continuous).bind().unwrap();
        assert_eq!(pdx_cohort(&recs, &b, OutcomeKind::Continuous).unwrap().len(), 88);
        assert_eq!(synthetic_pdx(&SyntheticPdx::default()).unwrap(), recs);
    }

    #[test]
    fn rule_assignment_makes_naive_pm_mean_exact() {
        let recs = synthetic_pdx(&SyntheticPdx::default()).unwrap();
        let spec = PdxExperimentSpec {
            n_replicates: 1,
            cohort_size: 88,
            assignment: PdxAssignment::Rule,
            methods: vec![Method::True, Method::Naive],
            estimands: vec![Estimand::Ce1],
            estimation: Some(quick_estimation()),
            ..Default::default()
        };
        let res = run_pdx_experiment(&recs, &PdxConfig::default(), &spec, &RunOptions::default(), &|_, _| {}).unwrap();
        // The naive CE1 fails (no control units), but the oracle PM mean is
        // the observed PM mean.
        let b = pdx_study(&PdxConfig::default(), OutcomeKind::Continuous).bind().unwrap();
        let pop = pdx_cohort(&recs, &b, OutcomeKind::Continuous).unwrap();
        let observed: f64 = pop
            .units()
            .iter()
            .map(|u| u.counterfactuals.as_ref().unwrap()[b.algorithm.recommend(&u.covariates).unwrap()].unwrap())
            .sum::<f64>()
            / pop.len() as f64;
        approx::assert_abs_diff_eq!(res.truth[&Estimand::Ce1].pm_mean, observed, epsilon = 1e-9);
        assert!(res.replicates[0].cells[&Estimand::Ce1][&Method::Naive].error.is_some());
    }

    #[test]
    fn same_seed_same_result() {
        let recs = synthetic_pdx(&SyntheticPdx::default()).unwrap();
        let spec = PdxExperimentSpec {
            n_replicates: 3,
            estimation: Some(quick_estimation()),
            ..Default::default()
        };
        let run = |w| run_pdx_experiment(&recs, &PdxConfig::default(), &spec, &RunOptions { workers: Some(w) }, &|_, _| {}).unwrap();
        assert_eq!(serde_json::to_string(&run(1)).unwrap(), serde_json::to_string(&run(2)).unwrap());
    }

    #[test]
    fn too_few_models() {
        let recs = synthetic_pdx(&SyntheticPdx {
            n_models: 10,
            ..Default::default()
        })
        .unwrap();
        let spec = PdxExperimentSpec::default();
        assert!(run_pdx_experiment(&recs, &PdxConfig::default(), &spec, &RunOptions::default(), &|_, _| {}).is_err());
    }
}
