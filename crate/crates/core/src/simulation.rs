//! Monte Carlo experiments: a super-population with known counterfactual
//! outcomes, observed treatment assignment, repeated cohort sampling and
//! scoring of every estimator against the super-population truth.
//!
//! Random streams are ChaCha8 keyed by the master seed with one stream per
//! purpose and per replicate, so results do not depend on the number of
//! worker threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Estimand, EstimationConfig, Estimator, Method};
use crate::glm::sigmoid;
use crate::model::{
    restrict_eligible_bound, Arm, BoundAlgorithm, CohortTable, CovariateKind, DistributionRow, OutcomeKind,
    UnitRecord, VersionDistribution, VersionId,
};
use crate::study::{BoundStudy, Study};

const STREAM_SUPERPOP: u64 = 0;
const STREAM_ASSIGN: u64 = 1;
const STREAM_REPLICATE_BASE: u64 = 1 << 32;
/// Per-replicate streams for mechanisms drawn inside a replicate.
pub(crate) const STREAM_REPLICATE_ASSIGN_BASE: u64 = 2 << 32;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const INTERCEPT: &str = "intercept";

/// Observed-treatment mechanism over all versions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservedDistribution {
    /// Covariate-independent P[K = k].
    Marginal { probs: BTreeMap<VersionId, f64> },
    /// g(k | c); the first row whose conditions hold applies.
    Table { rows: Vec<DistributionRow> },
}

impl ObservedDistribution {
    fn rows(&self) -> Vec<DistributionRow> {
        match self {
            ObservedDistribution::Marginal { probs } => vec![DistributionRow {
                when: BTreeMap::new(),
                probs: probs.clone(),
            }],
            ObservedDistribution::Table { rows } => rows.clone(),
        }
    }

    /// The physician's distribution over treated versions: each row
    /// conditioned on A = 1.
    pub fn physician(&self, study: &Study) -> Result<VersionDistribution> {
        let treated: Vec<&VersionId> = study.arms.treated.iter().collect();
        let rows = self
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mass: f64 = treated.iter().map(|v| r.probs.get(*v).copied().unwrap_or(0.0)).sum();
                if mass <= 0.0 {
                    return Err(Error::validation(
                        format!("simulation.observed_distribution.rows[{i}]"),
                        "no mass on treated versions",
                    ));
                }
                Ok(DistributionRow {
                    when: r.when,
                    probs: treated
                        .iter()
                        .map(|v| ((*v).clone(), r.probs.get(*v).copied().unwrap_or(0.0) / mass))
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(VersionDistribution::Table { rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub prevalences: BTreeMap<String, f64>,
    /// Per version: `intercept` plus one linear coefficient per covariate;
    /// absent entries are zero.
    pub coefficients: BTreeMap<VersionId, BTreeMap<String, f64>>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_superpop")]
    pub superpop_size: usize,
    #[serde(default = "default_cohort")]
    pub cohort_size: usize,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub observed_distribution: ObservedDistribution,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "all_estimands")]
    pub estimands: Vec<Estimand>,
}

fn default_noise_sd() -> f64 {
    10.0
}
fn default_superpop() -> usize {
    10_000
}
fn default_cohort() -> usize {
    200
}
fn default_replicates() -> usize {
    1000
}
fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn all_estimands() -> Vec<Estimand> {
    Estimand::ALL.to_vec()
}

/// A study plus its data-generating mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub study: Study,
    pub simulation: SimulationSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Two binary mutations, three versions, physician favouring k1_1.
    pub fn main() -> Self {
        Self::from_json(include_str!("../data/scenarios/main.json")).expect("bundled scenario")
    }

    /// As [`Scenario::main`] with every version observed with probability 1/3.
    pub fn uniform() -> Self {
        Self::from_json(include_str!("../data/scenarios/uniform.json")).expect("bundled scenario")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "main" => Some(Self::main()),
            "uniform" => Some(Self::uniform()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.study.validate()?;
        let sim = &self.simulation;
        let schema = &self.study.covariates;
        for c in &schema.covariates {
            if !matches!(c.kind, CovariateKind::Binary) {
                return Err(Error::validation(
                    format!("covariates.{}", c.name),
                    "simulated covariates must be binary",
                ));
            }
            match sim.prevalences.get(&c.name) {
                Some(p) if *p > 0.0 && *p < 1.0 => {}
                Some(p) => {
                    return Err(Error::validation(
                        format!("simulation.prevalences.{}", c.name),
                        format!("{p} is outside (0, 1)"),
                    ))
                }
                None => {
                    return Err(Error::validation(
                        format!("simulation.prevalences.{}", c.name),
                        "missing prevalence",
                    ))
                }
            }
        }
        if let Some(extra) = sim.prevalences.keys().find(|k| schema.index_of(k).is_none()) {
            return Err(Error::validation(
                format!("simulation.prevalences.{extra}"),
                "not a declared covariate",
            ));
        }
        for v in self.study.arms.versions() {
            if !sim.coefficients.contains_key(v) {
                return Err(Error::validation(
                    format!("simulation.coefficients.{v}"),
                    "missing coefficient row",
                ));
            }
        }
        for (v, row) in &sim.coefficients {
            if self.study.arms.index_of(v).is_none() {
                return Err(Error::validation(format!("simulation.coefficients.{v}"), "unknown version"));
            }
            for (name, b) in row {
                if name != INTERCEPT && schema.index_of(name).is_none() {
                    return Err(Error::validation(
                        format!("simulation.coefficients.{v}.{name}"),
                        "not a declared covariate",
                    ));
                }
                if !b.is_finite() {
                    return Err(Error::validation(format!("simulation.coefficients.{v}.{name}"), "not finite"));
                }
            }
        }
        if !(sim.noise_sd.is_finite() && sim.noise_sd >= 0.0) {
            return Err(Error::validation("simulation.noise_sd", "must be finite and >= 0"));
        }
        if sim.superpop_size == 0 {
            return Err(Error::validation("simulation.superpop_size", "must be positive"));
        }
        if sim.cohort_size == 0 || sim.cohort_size > sim.superpop_size {
            return Err(Error::validation(
                "simulation.cohort_size",
                format!("must be in 1..={}", sim.superpop_size),
            ));
        }
        if sim.n_replicates == 0 {
            return Err(Error::validation("simulation.n_replicates", "must be positive"));
        }
        if sim.methods.is_empty() || sim.estimands.is_empty() {
            return Err(Error::validation("simulation", "methods and estimands must be non-empty"));
        }
        for (i, row) in sim.observed_distribution.rows().iter().enumerate() {
            let field = format!("simulation.observed_distribution.rows[{i}]");
            for name in row.when.keys() {
                if schema.index_of(name).is_none() {
                    return Err(Error::validation(field, format!("unknown covariate {name}")));
                }
            }
            let mut total = 0.0;
            for (v, p) in &row.probs {
                if self.study.arms.index_of(v).is_none() {
                    return Err(Error::validation(field, format!("unknown version {v}")));
                }
                if !(p.is_finite() && *p >= 0.0) {
                    return Err(Error::validation(field, "probabilities must be >= 0"));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::validation(field, format!("probabilities sum to {total}, expected 1")));
            }
        }
        sim.observed_distribution.physician(&self.study)?;
        Ok(())
    }

    /// Estimation options with the oracle's physician distribution set to
    /// the known assignment mechanism unless one is configured.
    pub fn estimation_config(&self) -> Result<EstimationConfig> {
        let mut cfg = self.study.estimation.clone();
        if cfg.physician.is_none() {
            cfg.physician = Some(self.simulation.observed_distribution.physician(&self.study)?);
        }
        Ok(cfg)
    }
}

/// Units with counterfactual outcomes for every version and nothing
/// observed yet.
pub fn generate_superpopulation(scenario: &Scenario, seed: u64) -> Result<CohortTable> {
    let bound = scenario.study.bind()?;
    let sim = &scenario.simulation;
    let schema = &bound.schema;
    let prevalence: Vec<f64> = schema.covariates.iter().map(|c| sim.prevalences[&c.name]).collect();
    let coef: Vec<(f64, Vec<f64>)> = bound
        .arms
        .versions()
        .map(|v| {
            let row = &sim.coefficients[v];
            (
                row.get(INTERCEPT).copied().unwrap_or(0.0),
                schema
                    .covariates
                    .iter()
                    .map(|c| row.get(&c.name).copied().unwrap_or(0.0))
                    .collect(),
            )
        })
        .collect();
    let noise = Normal::new(0.0, sim.noise_sd).map_err(|e| Error::validation("simulation.noise_sd", e.to_string()))?;
    let binary = scenario.study.outcome == OutcomeKind::Binary;
    let mut rng = stream_rng(seed, STREAM_SUPERPOP);
    let width = sim.superpop_size.to_string().len();
    let units = (0..sim.superpop_size)
        .map(|i| {
            let covariates: Vec<f64> = prevalence.iter().map(|p| f64::from(rng.random::<f64>() < *p)).collect();
            let cf = coef
                .iter()
                .map(|(b0, b)| {
                    let lp = b0 + b.iter().zip(&covariates).map(|(x, y)| x * y).sum::<f64>();
                    Some(if binary {
                        f64::from(rng.random::<f64>() < sigmoid(lp))
                    } else {
                        lp + noise.sample(&mut rng)
                    })
                })
                .collect();
            UnitRecord {
                unit_id: format!("p{i:0width$}"),
                covariates,
                arm: None,
                version: None,
                outcome: None,
                counterfactuals: Some(cf),
            }
        })
        .collect();
    CohortTable::new(bound.schema.clone(), bound.arms.clone(), scenario.study.outcome, units)
}

/// Draws each unit's version from the observed distribution and reveals the
/// matching counterfactual as the observed outcome.
pub fn assign_observed(superpop: &CohortTable, distribution: &ObservedDistribution, seed: u64) -> Result<CohortTable> {
    let schema = superpop.schema();
    let arms = superpop.arm_spec();
    let nv = arms.n_versions();
    let mut rows = Vec::new();
    for row in distribution.rows() {
        let conds = row
            .when
            .iter()
            .map(|(n, v)| Ok((schema.require(n)?, *v)))
            .collect::<Result<Vec<_>>>()?;
        let mut p = vec![0.0; nv];
        for (v, q) in &row.probs {
            let k = arms
                .index_of(v)
                .ok_or_else(|| Error::validation("observed_distribution", format!("unknown version {v}")))?;
            p[k] = *q;
        }
        rows.push((conds, p));
    }
    let mut rng = stream_rng(seed, STREAM_ASSIGN);
    let mut units = Vec::with_capacity(superpop.len());
    for u in superpop.units() {
        let p = &rows
            .iter()
            .find(|(c, _)| c.iter().all(|&(j, v)| u.covariates[j] == v))
            .ok_or_else(|| Error::Schema(format!("no observed-distribution row applies to unit {}", u.unit_id)))?
            .1;
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = nv - 1;
        for (j, q) in p.iter().enumerate() {
            acc += q;
            if draw < acc {
                k = j;
                break;
            }
        }
        // Guard against rounding leaving k on a zero-mass version.
        while p[k] == 0.0 && k > 0 {
            k -= 1;
        }
        let cf = u.counterfactuals.as_ref().ok_or_else(|| {
            Error::MissingCounterfactual(vec![format!("unit {} has no counterfactuals", u.unit_id)])
        })?;
        units.push(UnitRecord {
            arm: Some(arms.arm_of(k)),
            version: Some(k),
            outcome: cf[k],
            ..u.clone()
        });
    }
    CohortTable::new(superpop.schema_arc().clone(), superpop.arm_spec_arc().clone(), superpop.outcome_kind(), units)
}

/// Positions of a uniform without-replacement sample of `n` units for one
/// replicate, in ascending order.
pub fn sample_indices(population: usize, n: usize, seed: u64, replicate: usize) -> Result<Vec<usize>> {
    if n > population {
        return Err(Error::validation(
            "cohort_size",
            format!("{n} exceeds the super-population size {population}"),
        ));
    }
    let mut rng = stream_rng(seed, STREAM_REPLICATE_BASE + replicate as u64);
    let mut idx = rand::seq::index::sample(&mut rng, population, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `r` independent cohorts of `n` units.
pub fn sample_cohorts(
    superpop: &CohortTable,
    n: usize,
    r: usize,
    seed: u64,
) -> impl Iterator<Item = Result<CohortTable>> + '_ {
    (0..r).map(move |i| Ok(superpop.subset(&sample_indices(superpop.len(), n, seed, i)?)))
}

/// Mean absolute deviation of the finite estimates from `truth`, with the
/// number of skipped entries.
pub fn mae(estimates: &[Option<f64>], truth: f64) -> Result<(f64, usize)> {
    let ok: Vec<f64> = estimates.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if ok.is_empty() {
        return Err(Error::validation("estimates", "no finite estimate to score"));
    }
    let m = ok.iter().map(|e| (e - truth).abs()).sum::<f64>() / ok.len() as f64;
    Ok((m, estimates.len() - ok.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthValue {
    pub effect: f64,
    pub pm_mean: f64,
    pub control_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCell {
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub n_eligible: usize,
    pub cells: BTreeMap<Estimand, BTreeMap<Method, ReplicateCell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation across replicates.
    pub sd: Option<f64>,
    pub mae: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub master_seed: u64,
    pub n_replicates: usize,
    pub cohort_size: usize,
    pub superpop_size: usize,
    pub superpop_eligible: usize,
    pub truth: BTreeMap<Estimand, TruthValue>,
    pub summary: BTreeMap<Estimand, BTreeMap<Method, CellSummary>>,
    pub replicates: Vec<ReplicateResult>,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    /// Estimates of one cell across replicates, in replicate order.
    pub fn estimates(&self, estimand: Estimand, method: Method) -> Vec<Option<f64>> {
        self.replicates
            .iter()
            .map(|r| r.cells.get(&estimand).and_then(|m| m.get(&method)).and_then(|c| c.estimate))
            .collect()
    }

    /// Flat rows `replicate, estimand, method, estimate, flags`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replicate", "estimand", "method", "estimate", "flags"])?;
        for r in &self.replicates {
            for (e, row) in &r.cells {
                for (m, c) in row {
                    let mut flags = c.flags.clone();
                    if let Some(err) = &c.error {
                        flags.push(format!("error: {err}"));
                    }
                    w.write_record([
                        r.replicate.to_string(),
                        e.to_string(),
                        m.to_string(),
                        c.estimate.map(|v| v.to_string()).unwrap_or_default(),
                        flags.join(";"),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

/// Oracle effects on a cohort carrying counterfactuals.
pub fn oracle_truth(
    cohort: &CohortTable,
    algorithm: &BoundAlgorithm,
    config: &EstimationConfig,
    estimands: &[Estimand],
) -> Result<BTreeMap<Estimand, TruthValue>> {
    let est = Estimator::new(cohort, algorithm, config)?;
    estimands
        .iter()
        .map(|&e| {
            let r = est.estimate_effect(e, Method::True)?;
            Ok((
                e,
                TruthValue {
                    effect: r.effect,
                    pm_mean: r.pm_mean,
                    control_mean: r.control_mean,
                },
            ))
        })
        .collect()
}

/// What a replicate loop needs besides the cohort sampler.
pub(crate) struct Plan<'a> {
    pub name: String,
    pub master_seed: u64,
    pub n_replicates: usize,
    pub cohort_size: usize,
    pub superpop_size: usize,
    /// Eligible units with counterfactuals; the truth is computed on them.
    pub truth_population: &'a CohortTable,
    pub bound: &'a BoundStudy,
    pub config: &'a EstimationConfig,
    pub methods: &'a [Method],
    pub estimands: &'a [Estimand],
}

fn run_replicate(
    plan: &Plan<'_>,
    replicate: usize,
    make_cohort: &(dyn Fn(usize) -> Result<CohortTable> + Sync),
) -> ReplicateResult {
    let fail = |msg: String| {
        let cells = plan
            .estimands
            .iter()
            .map(|&e| {
                let row = plan
                    .methods
                    .iter()
                    .map(|&m| {
                        (
                            m,
                            ReplicateCell {
                                error: Some(msg.clone()),
                                ..Default::default()
                            },
                        )
                    })
                    .collect();
                (e, row)
            })
            .collect();
        ReplicateResult {
            replicate,
            n_eligible: 0,
            cells,
        }
    };
    let eligible = match make_cohort(replicate).and_then(|c| restrict_eligible_bound(&c, &plan.bound.algorithm)) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let est = match Estimator::new(&eligible, &plan.bound.algorithm, plan.config) {
        Ok(e) => e,
        Err(e) => return fail(e.to_string()),
    };
    let report = est.report(plan.estimands, plan.methods);
    let cells = report
        .estimates
        .into_iter()
        .map(|(e, row)| {
            let row = row
                .into_iter()
                .map(|(m, r)| {
                    (
                        m,
                        ReplicateCell {
                            estimate: r.effect,
                            flags: r.diagnostics.flags,
                            error: r.error,
                        },
                    )
                })
                .collect();
            (e, row)
        })
        .collect();
    ReplicateResult {
        replicate,
        n_eligible: eligible.len(),
        cells,
    }
}

fn summarize(values: &[Option<f64>], flagged: usize, truth: Option<f64>) -> CellSummary {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let n = ok.len();
    let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
    let sd = (n > 1).then(|| {
        let m = mean.unwrap_or(0.0);
        (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    CellSummary {
        mean,
        sd,
        mae: truth.and_then(|t| mae(values, t).ok().map(|m| m.0)),
        n_ok: n,
        n_failed: values.len() - n,
        n_flagged: flagged,
    }
}

/// Runs every replicate of `scenario`. `progress` receives the number of
/// finished replicates after each one completes.
pub fn run_experiment(
    scenario: &Scenario,
    options: &RunOptions,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<ExperimentResult> {
    scenario.validate()?;
    let sim = &scenario.simulation;
    let bound = scenario.study.bind()?;
    let config = scenario.estimation_config()?;
    let superpop = assign_observed(
        &generate_superpopulation(scenario, sim.master_seed)?,
        &sim.observed_distribution,
        sim.master_seed,
    )?;
    let eligible_pop = restrict_eligible_bound(&superpop, &bound.algorithm)?;
    let plan = Plan {
        name: scenario.study.name.clone(),
        master_seed: sim.master_seed,
        n_replicates: sim.n_replicates,
        cohort_size: sim.cohort_size,
        superpop_size: superpop.len(),
        truth_population: &eligible_pop,
        bound: &bound,
        config: &config,
        methods: &sim.methods,
        estimands: &sim.estimands,
    };
    let mut result = execute(&plan, options, progress, &|r| {
        Ok(superpop.subset(&sample_indices(superpop.len(), sim.cohort_size, sim.master_seed, r)?))
    })?;
    let expected_eligible = sim.cohort_size as f64 * eligible_pop.len() as f64 / superpop.len() as f64;
    if expected_eligible < 20.0 {
        result.warnings.insert(
            0,
            format!("cohorts are expected to hold only {expected_eligible:.1} eligible units"),
        );
    }
    Ok(result)
}

pub(crate) fn execute(
    plan: &Plan<'_>,
    options: &RunOptions,
    progress: &(dyn Fn(usize, usize) + Sync),
    make_cohort: &(dyn Fn(usize) -> Result<CohortTable> + Sync),
) -> Result<ExperimentResult> {
    let truth = oracle_truth(plan.truth_population, &plan.bound.algorithm, plan.config, plan.estimands)?;
    let done = AtomicUsize::new(0);
    let total = plan.n_replicates;
    let work = || {
        (0..total)
            .into_par_iter()
            .map(|r| {
                let res = run_replicate(plan, r, make_cohort);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                res
            })
            .collect::<Vec<_>>()
    };
    let replicates = match options.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Model(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut warnings = Vec::new();
    let mut summary = BTreeMap::new();
    for &e in plan.estimands {
        let mut row = BTreeMap::new();
        for &m in plan.methods {
            let values: Vec<Option<f64>> = replicates
                .iter()
                .map(|r| r.cells.get(&e).and_then(|x| x.get(&m)).and_then(|c| c.estimate))
                .collect();
            let flagged = replicates
                .iter()
                .filter(|r| r.cells.get(&e).and_then(|x| x.get(&m)).is_some_and(|c| !c.flags.is_empty()))
                .count();
            let s = summarize(&values, flagged, truth.get(&e).map(|t| t.effect));
            if s.n_failed * 10 > total {
                warnings.push(format!("{e}/{m}: {} of {total} replicates failed", s.n_failed));
            }
            row.insert(m, s);
        }
        summary.insert(e, row);
    }

    Ok(ExperimentResult {
        scenario: plan.name.clone(),
        master_seed: plan.master_seed,
        n_replicates: total,
        cohort_size: plan.cohort_size,
        superpop_size: plan.superpop_size,
        superpop_eligible: plan.truth_population.len(),
        truth,
        summary,
        replicates,
        warnings,
    })
}

/// Units of `arm` in a cohort; used by diagnostics and tests.
pub fn arm_count(cohort: &CohortTable, arm: Arm) -> usize {
    cohort.units().iter().filter(|u| u.arm == Some(arm)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(mut s: Scenario, n_rep: usize) -> Scenario {
        s.simulation.n_replicates = n_rep;
        s.simulation.superpop_size = 2000;
        s
    }

    #[test]
    fn presets_validate() {
        Scenario::main().validate().unwrap();
        Scenario::uniform().validate().unwrap();
        assert!(Scenario::preset("nope").is_none());
    }

    #[test]
    fn table_rows_without_noise() {
        let mut s = Scenario::main();
        s.simulation.noise_sd = 0.0;
        s.simulation.superpop_size = 500;
        let pop = generate_superpopulation(&s, 1).unwrap();
        for u in pop.units() {
            let cf: Vec<f64> = u.counterfactuals.as_ref().unwrap().iter().map(|v| v.unwrap()).collect();
            let (c1, c2) = (u.covariates[0], u.covariates[1]);
            assert_eq!(cf[0], 15.0 * c2);
            assert_eq!(cf[1], -25.0 - 15.0 * c1 + 10.0 * c2);
            assert_eq!(cf[2], -20.0 * c2);
        }
    }

    #[test]
    fn assignment_is_consistent_and_deterministic() {
        let s = small(Scenario::main(), 1);
        let pop = generate_superpopulation(&s, 3).unwrap();
        let a = assign_observed(&pop, &s.simulation.observed_distribution, 3).unwrap();
        let b = assign_observed(&pop, &s.simulation.observed_distribution, 3).unwrap();
        assert_eq!(a.units(), b.units());
        assert!(a.consistency_violations().is_empty());
        let degenerate = ObservedDistribution::Marginal {
            probs: [(VersionId::new("k0"), 1.0)].into_iter().collect(),
        };
        let c = assign_observed(&pop, &degenerate, 3).unwrap();
        assert_eq!(arm_count(&c, Arm::Control), c.len());
    }

    #[test]
    fn sampling() {
        let full = sample_indices(50, 50, 9, 0).unwrap();
        assert_eq!(full, (0..50).collect::<Vec<_>>());
        assert_ne!(sample_indices(1000, 20, 9, 0).unwrap(), sample_indices(1000, 20, 9, 1).unwrap());
        assert!(sample_indices(5, 6, 9, 0).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[Some(1.0), Some(3.0)], 2.0).unwrap(), (1.0, 0));
        assert_eq!(mae(&[Some(2.0), None], 2.0).unwrap(), (0.0, 1));
        assert_abs_diff_eq!(mae(&[Some(-41.68); 3], -39.375).unwrap().0, 2.305, epsilon = 1e-12);
        assert!(mae(&[None], 0.0).is_err());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = small(Scenario::main(), 6);
        let a = run_experiment(&s, &RunOptions { workers: Some(1) }, &|_, _| {}).unwrap();
        let b = run_experiment(&s, &RunOptions { workers: Some(3) }, &|_, _| {}).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.replicates.len(), 6);
        // The oracle's deviation is pure sampling error.
        assert!(a.summary[&Estimand::Ce1][&Method::True].mae.unwrap() > 0.0);
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::main();
        s.simulation.prevalences.insert("C1".into(), 1.0);
        assert!(s.validate().is_err());
        let mut s = Scenario::main();
        s.simulation.cohort_size = s.simulation.superpop_size + 1;
        assert!(s.validate().is_err());
        let mut s = Scenario::main();
        s.simulation.coefficients.remove(&VersionId::new("k0"));
        assert!(s.validate().is_err());
    }

    #[test]
    fn physician_distribution_conditions_on_treated() {
        let s = Scenario::main();
        let VersionDistribution::Table { rows } = s.simulation.observed_distribution.physician(&s.study).unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(rows[0].probs[&VersionId::new("k1_1")], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[0].probs[&VersionId::new("k1_2")], 1.0 / 3.0, epsilon = 1e-15);
    }
}
