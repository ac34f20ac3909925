//! Domain types shared by every estimator: treatment arms and their versions,
//! covariate schemas, unit-level cohorts, precision-medicine algorithms and
//! positivity diagnostics.
//!
//! Cohorts are validated once, at construction. Everything downstream indexes
//! covariates and versions by position and skips re-validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default positivity threshold.
pub const DEFAULT_POSITIVITY_EPSILON: f64 = 0.025;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionId(pub String);

impl VersionId {
    pub fn new(label: impl Into<String>) -> Self {
        VersionId(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VersionId {
    fn from(s: &str) -> Self {
        VersionId(s.to_string())
    }
}

/// Treatment arm: `Control` is A = 0, `Treated` is A = 1.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(format!("arm must be 0 or 1, got {other}")),
        }
    }
}

/// Control versions (𝒦⁰) and treated versions (𝒦¹).
///
/// Versions are addressed by their position in `control ++ treated`; the
/// sets are disjoint so a version determines its arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub control: Vec<VersionId>,
    pub treated: Vec<VersionId>,
}

impl ArmSpec {
    pub fn new(control: Vec<VersionId>, treated: Vec<VersionId>) -> Result<Self> {
        let spec = ArmSpec { control, treated };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.control.is_empty() {
            return Err(Error::validation("arms.control", "at least one control version required"));
        }
        if self.treated.is_empty() {
            return Err(Error::validation("arms.treated", "at least one treated version required"));
        }
        let mut seen = HashSet::new();
        for v in self.versions() {
            if !seen.insert(v) {
                return Err(Error::validation(
                    "arms",
                    format!("version {v} appears more than once (arm version sets must be disjoint)"),
                ));
            }
        }
        Ok(())
    }

    pub fn n_versions(&self) -> usize {
        self.control.len() + self.treated.len()
    }

    pub fn versions(&self) -> impl Iterator<Item = &VersionId> + '_ {
        self.control.iter().chain(self.treated.iter())
    }

    pub fn version(&self, idx: usize) -> &VersionId {
        if idx < self.control.len() {
            &self.control[idx]
        } else {
            &self.treated[idx - self.control.len()]
        }
    }

    pub fn index_of(&self, v: &VersionId) -> Option<usize> {
        self.versions().position(|x| x == v)
    }

    pub fn index_of_str(&self, label: &str) -> Option<usize> {
        self.versions().position(|x| x.as_str() == label)
    }

    pub fn arm_of(&self, idx: usize) -> Arm {
        if idx < self.control.len() {
            Arm::Control
        } else {
            Arm::Treated
        }
    }

    /// Index range of the versions belonging to `arm`.
    pub fn arm_range(&self, arm: Arm) -> Range<usize> {
        match arm {
            Arm::Control => 0..self.control.len(),
            Arm::Treated => self.control.len()..self.n_versions(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Role {
    /// Direct causes of the outcome.
    #[default]
    C,
    /// Causes of treatment or version only.
    W,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
    /// Stored as the level index; the first level is the reference.
    Categorical { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateDef {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateDef {
    pub fn binary(name: impl Into<String>) -> Self {
        CovariateDef {
            name: name.into(),
            role: Role::C,
            kind: CovariateKind::Binary,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        CovariateDef {
            name: name.into(),
            role: Role::C,
            kind: CovariateKind::Continuous,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, CovariateKind::Continuous)
    }

    fn check_value(&self, v: f64) -> Result<()> {
        let ok = match &self.kind {
            CovariateKind::Binary => v == 0.0 || v == 1.0,
            CovariateKind::Continuous => v.is_finite(),
            CovariateKind::Categorical { levels } => {
                v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Schema(format!("covariate {}: invalid value {v}", self.name)))
        }
    }
}

/// Ordered covariate declarations for a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub covariates: Vec<CovariateDef>,
}

impl Schema {
    pub fn new(covariates: Vec<CovariateDef>) -> Result<Self> {
        let schema = Schema { covariates };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.covariates {
            if c.name.is_empty() {
                return Err(Error::validation("covariates", "empty covariate name"));
            }
            if matches!(c.name.as_str(), "K" | "A") {
                return Err(Error::validation(
                    "covariates",
                    format!("{} is reserved for the treatment factors", c.name),
                ));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation("covariates", format!("duplicate covariate {}", c.name)));
            }
            if let CovariateKind::Categorical { levels } = &c.kind {
                if levels.is_empty() {
                    return Err(Error::validation(
                        format!("covariates.{}", c.name),
                        "categorical covariate needs at least one level",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate {name}")))
    }

    pub fn get(&self, idx: usize) -> &CovariateDef {
        &self.covariates[idx]
    }
}

/// Named covariate values of one unit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CovariateProfile {
    values: BTreeMap<String, f64>,
}

impl CovariateProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        CovariateProfile {
            values: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("profile is missing covariate {name}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    /// Values aligned with the cohort schema.
    pub covariates: Vec<f64>,
    pub arm: Option<Arm>,
    /// Index into `ArmSpec::versions()`.
    pub version: Option<usize>,
    pub outcome: Option<f64>,
    /// Oracle outcomes aligned with `ArmSpec::versions()`.
    pub counterfactuals: Option<Vec<Option<f64>>>,
}

impl UnitRecord {
    pub fn profile(&self, schema: &Schema) -> CovariateProfile {
        CovariateProfile {
            values: schema
                .covariates
                .iter()
                .zip(&self.covariates)
                .map(|(c, v)| (c.name.clone(), *v))
                .collect(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    #[default]
    Continuous,
    Binary,
}

/// Rectangular unit-level data with a fixed schema.
#[derive(Clone, Debug)]
pub struct CohortTable {
    schema: Arc<Schema>,
    arm_spec: Arc<ArmSpec>,
    outcome_kind: OutcomeKind,
    units: Vec<UnitRecord>,
}

impl CohortTable {
    /// Validates every unit against the schema and the arm specification.
    ///
    /// A missing arm is filled in from the observed version.
    pub fn new(
        schema: Arc<Schema>,
        arm_spec: Arc<ArmSpec>,
        outcome_kind: OutcomeKind,
        mut units: Vec<UnitRecord>,
    ) -> Result<Self> {
        schema.validate()?;
        arm_spec.validate()?;
        let mut ids = HashSet::with_capacity(units.len());
        let nv = arm_spec.n_versions();
        for u in &mut units {
            if !ids.insert(u.unit_id.clone()) {
                return Err(Error::Schema(format!("duplicate unit_id {}", u.unit_id)));
            }
            if u.covariates.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "unit {}: expected {} covariates, got {}",
                    u.unit_id,
                    schema.len(),
                    u.covariates.len()
                )));
            }
            for (def, v) in schema.covariates.iter().zip(&u.covariates) {
                def.check_value(*v)
                    .map_err(|e| Error::Schema(format!("unit {}: {e}", u.unit_id)))?;
            }
            if let Some(k) = u.version {
                if k >= nv {
                    return Err(Error::Schema(format!("unit {}: unknown version index {k}", u.unit_id)));
                }
                let implied = arm_spec.arm_of(k);
                match u.arm {
                    None => u.arm = Some(implied),
                    Some(a) if a != implied => {
                        return Err(Error::Schema(format!(
                            "unit {}: version {} does not belong to arm {}",
                            u.unit_id,
                            arm_spec.version(k),
                            a.code()
                        )))
                    }
                    _ => {}
                }
            }
            check_outcome(outcome_kind, u.outcome, &u.unit_id)?;
            if let Some(cf) = &u.counterfactuals {
                if cf.len() != nv {
                    return Err(Error::Schema(format!(
                        "unit {}: expected {nv} counterfactual columns, got {}",
                        u.unit_id,
                        cf.len()
                    )));
                }
                for y in cf {
                    check_outcome(outcome_kind, *y, &u.unit_id)?;
                }
                if let (Some(k), Some(y)) = (u.version, u.outcome) {
                    if let Some(yk) = cf[k] {
                        if yk != y {
                            return Err(Error::Schema(format!(
                                "unit {}: counterfactual for observed version {} ({yk}) differs from observed outcome ({y})",
                                u.unit_id,
                                arm_spec.version(k)
                            )));
                        }
                    }
                }
            }
        }
        Ok(CohortTable {
            schema,
            arm_spec,
            outcome_kind,
            units,
        })
    }

    pub(crate) fn from_validated(&self, units: Vec<UnitRecord>) -> CohortTable {
        CohortTable {
            schema: self.schema.clone(),
            arm_spec: self.arm_spec.clone(),
            outcome_kind: self.outcome_kind,
            units,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn arm_spec(&self) -> &ArmSpec {
        &self.arm_spec
    }

    pub fn arm_spec_arc(&self) -> &Arc<ArmSpec> {
        &self.arm_spec
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Units at the given positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> CohortTable {
        self.from_validated(indices.iter().map(|&i| self.units[i].clone()).collect())
    }

    /// True when every unit carries a counterfactual column for every version.
    pub fn has_counterfactuals(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.counterfactuals.is_some())
    }

    /// Copy with oracle columns removed.
    pub fn without_counterfactuals(&self) -> CohortTable {
        self.from_validated(
            self.units
                .iter()
                .map(|u| UnitRecord {
                    counterfactuals: None,
                    ..u.clone()
                })
                .collect(),
        )
    }

    /// Units whose observed outcome differs from the counterfactual of their
    /// observed version. Always empty for a constructed table.
    pub fn consistency_violations(&self) -> Vec<String> {
        self.units
            .iter()
            .filter(|u| match (&u.counterfactuals, u.version, u.outcome) {
                (Some(cf), Some(k), Some(y)) => cf[k].is_some_and(|yk| yk != y),
                _ => false,
            })
            .map(|u| u.unit_id.clone())
            .collect()
    }
}

fn check_outcome(kind: OutcomeKind, y: Option<f64>, unit: &str) -> Result<()> {
    match y {
        None => Ok(()),
        Some(v) if !v.is_finite() => Err(Error::Schema(format!("unit {unit}: non-finite outcome"))),
        Some(v) if kind == OutcomeKind::Binary && v != 0.0 && v != 1.0 => {
            Err(Error::Schema(format!("unit {unit}: binary outcome must be 0 or 1, got {v}")))
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Recommendation {
    Version(VersionId),
    Ineligible,
}

/// One entry of a decision list: every condition must hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub when: BTreeMap<String, f64>,
    pub recommend: VersionId,
}

/// Precision-medicine treatment algorithm as an ordered decision list.
///
/// The first rule whose conditions all hold wins; a profile matching no rule
/// is ineligible. Overlapping rules are therefore resolved by order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PmAlgorithm {
    pub rules: Vec<Rule>,
}

impl PmAlgorithm {
    pub fn new(rules: Vec<Rule>) -> Self {
        PmAlgorithm { rules }
    }

    /// Convenience builder: `rule(&[("C1", 1.0)], "k1_1")`.
    pub fn rule(mut self, when: &[(&str, f64)], recommend: &str) -> Self {
        self.rules.push(Rule {
            when: when.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            recommend: VersionId::new(recommend),
        });
        self
    }

    pub fn covariates(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| r.when.keys().map(String::as_str))
            .collect()
    }

    pub fn recommend(&self, profile: &CovariateProfile) -> Result<Recommendation> {
        for name in self.covariates() {
            profile.get(name)?;
        }
        for rule in &self.rules {
            let mut fires = true;
            for (name, want) in &rule.when {
                if profile.get(name)? != *want {
                    fires = false;
                    break;
                }
            }
            if fires {
                return Ok(Recommendation::Version(rule.recommend.clone()));
            }
        }
        Ok(Recommendation::Ineligible)
    }

    /// Resolves covariate names and versions against a study.
    pub fn bind(&self, schema: &Schema, arms: &ArmSpec) -> Result<BoundAlgorithm> {
        if self.rules.is_empty() {
            return Err(Error::validation("algorithm", "decision list is empty"));
        }
        let mut rules = Vec::with_capacity(self.rules.len());
        for (i, rule) in self.rules.iter().enumerate() {
            let mut conds = Vec::with_capacity(rule.when.len());
            for (name, v) in &rule.when {
                conds.push((schema.require(name)?, *v));
            }
            let k = arms.index_of(&rule.recommend).ok_or_else(|| {
                Error::validation(format!("algorithm[{i}].recommend"), format!("unknown version {}", rule.recommend))
            })?;
            if arms.arm_of(k) != Arm::Treated {
                return Err(Error::validation(
                    format!("algorithm[{i}].recommend"),
                    format!("{} is not a treated version", rule.recommend),
                ));
            }
            conds.sort_by_key(|c| c.0);
            rules.push((conds, k));
        }
        let mut used: Vec<usize> = rules.iter().flat_map(|(c, _)| c.iter().map(|x| x.0)).collect();
        used.sort_unstable();
        used.dedup();
        Ok(BoundAlgorithm { rules, used })
    }
}

/// A [`PmAlgorithm`] with covariates and versions resolved to indices.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundAlgorithm {
    rules: Vec<(Vec<(usize, f64)>, usize)>,
    used: Vec<usize>,
}

impl BoundAlgorithm {
    /// Recommended version index, or `None` when ineligible.
    pub fn recommend(&self, covariates: &[f64]) -> Option<usize> {
        self.rules
            .iter()
            .find(|(conds, _)| conds.iter().all(|&(i, v)| covariates[i] == v))
            .map(|(_, k)| *k)
    }

    /// Schema indices of the covariates the rules read, ascending.
    pub fn covariate_indices(&self) -> &[usize] {
        &self.used
    }
}

/// Recommendation of `algorithm` for one covariate profile.
pub fn eligibility(algorithm: &PmAlgorithm, profile: &CovariateProfile) -> Result<Recommendation> {
    algorithm.recommend(profile)
}

/// Keeps exactly the units the algorithm recommends a version to, in order.
pub fn restrict_eligible(cohort: &CohortTable, algorithm: &PmAlgorithm) -> Result<CohortTable> {
    let bound = algorithm.bind(cohort.schema(), cohort.arm_spec())?;
    restrict_eligible_bound(cohort, &bound)
}

pub fn restrict_eligible_bound(cohort: &CohortTable, algorithm: &BoundAlgorithm) -> Result<CohortTable> {
    let units: Vec<UnitRecord> = cohort
        .units()
        .iter()
        .filter(|u| algorithm.recommend(&u.covariates).is_some())
        .cloned()
        .collect();
    if units.is_empty() {
        return Err(Error::NoEligibleUnits);
    }
    Ok(cohort.from_validated(units))
}

/// Target distribution over the versions of one arm, conditional on covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VersionDistribution {
    /// All mass on the algorithm's recommendation r(C).
    DiracAtRule,
    /// Observed version frequencies of the arm within each stratum.
    EmpiricalPhysician,
    Uniform,
    /// Explicit g(k | c); the first row whose conditions hold applies.
    Table { rows: Vec<DistributionRow> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    #[serde(default)]
    pub when: BTreeMap<String, f64>,
    pub probs: BTreeMap<VersionId, f64>,
}

impl VersionDistribution {
    /// A covariate-free table placing all mass on one version.
    pub fn constant(version: &VersionId) -> Self {
        VersionDistribution::Table {
            rows: vec![DistributionRow {
                when: BTreeMap::new(),
                probs: [(version.clone(), 1.0)].into_iter().collect(),
            }],
        }
    }

    /// True when g(k | c) cannot depend on c.
    pub fn is_covariate_free(&self) -> bool {
        match self {
            VersionDistribution::Uniform => true,
            VersionDistribution::Table { rows } => rows.iter().all(|r| r.when.is_empty()) || {
                rows.windows(2).all(|w| w[0].probs == w[1].probs)
            },
            _ => false,
        }
    }

    /// Per-unit masses over the versions of `arm` (columns follow
    /// `ArmSpec::arm_range(arm)`).
    pub fn resolve(
        &self,
        cohort: &CohortTable,
        arm: Arm,
        algorithm: &BoundAlgorithm,
        strata: &Strata,
    ) -> Result<Vec<Vec<f64>>> {
        let arms = cohort.arm_spec();
        let range = arms.arm_range(arm);
        let width = range.len();
        let rows: Vec<Vec<f64>> = match self {
            VersionDistribution::DiracAtRule => {
                if arm != Arm::Treated {
                    return Err(Error::validation("distribution", "dirac-at-rule targets the treated arm"));
                }
                cohort
                    .units()
                    .iter()
                    .map(|u| {
                        let k = algorithm.recommend(&u.covariates).ok_or_else(|| {
                            Error::Schema(format!("unit {} is not eligible for the algorithm", u.unit_id))
                        })?;
                        let mut g = vec![0.0; width];
                        g[k - range.start] = 1.0;
                        Ok(g)
                    })
                    .collect::<Result<_>>()?
            }
            VersionDistribution::Uniform => vec![vec![1.0 / width as f64; width]; cohort.len()],
            VersionDistribution::EmpiricalPhysician => {
                let mut counts = vec![vec![0.0; width]; strata.len()];
                let mut pooled = vec![0.0; width];
                for (u, &s) in cohort.units().iter().zip(&strata.unit_stratum) {
                    if let Some(k) = u.version {
                        if range.contains(&k) {
                            counts[s][k - range.start] += 1.0;
                            pooled[k - range.start] += 1.0;
                        }
                    }
                }
                let total: f64 = pooled.iter().sum();
                if total == 0.0 {
                    return Err(Error::EmptyCell(format!("no unit observed in arm {}", arm.code())));
                }
                let pooled: Vec<f64> = pooled.iter().map(|c| c / total).collect();
                let per_stratum: Vec<Vec<f64>> = counts
                    .into_iter()
                    .map(|c| {
                        let t: f64 = c.iter().sum();
                        if t > 0.0 {
                            c.iter().map(|x| x / t).collect()
                        } else {
                            pooled.clone()
                        }
                    })
                    .collect();
                strata.unit_stratum.iter().map(|&s| per_stratum[s].clone()).collect()
            }
            VersionDistribution::Table { rows } => {
                let schema = cohort.schema();
                let mut bound = Vec::with_capacity(rows.len());
                for (i, row) in rows.iter().enumerate() {
                    let conds = row
                        .when
                        .iter()
                        .map(|(n, v)| Ok((schema.require(n)?, *v)))
                        .collect::<Result<Vec<_>>>()?;
                    let mut g = vec![0.0; width];
                    for (v, p) in &row.probs {
                        let k = arms
                            .index_of(v)
                            .filter(|k| range.contains(k))
                            .ok_or_else(|| {
                                Error::validation(
                                    format!("distribution.rows[{i}]"),
                                    format!("version {v} is not in arm {}", arm.code()),
                                )
                            })?;
                        g[k - range.start] = *p;
                    }
                    check_simplex(&g).map_err(|m| Error::validation(format!("distribution.rows[{i}]"), m))?;
                    bound.push((conds, g));
                }
                cohort
                    .units()
                    .iter()
                    .map(|u| {
                        bound
                            .iter()
                            .find(|(c, _)| c.iter().all(|&(j, v)| u.covariates[j] == v))
                            .map(|(_, g)| g.clone())
                            .ok_or_else(|| {
                                Error::Schema(format!("no distribution row applies to unit {}", u.unit_id))
                            })
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(rows)
    }
}

fn check_simplex(g: &[f64]) -> std::result::Result<(), String> {
    if g.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("masses must be non-negative".into());
    }
    let s: f64 = g.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(format!("masses sum to {s}, expected 1"));
    }
    Ok(())
}

/// Covariates defining positivity strata. Continuous covariates need cut
/// points; a value `x` falls in bin `j` when `cuts[j-1] < x <= cuts[j]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stratifier {
    pub covariates: Vec<String>,
    #[serde(default)]
    pub cuts: BTreeMap<String, Vec<f64>>,
}

impl Stratifier {
    pub fn new(covariates: &[&str]) -> Self {
        Stratifier {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            cuts: BTreeMap::new(),
        }
    }

    /// The binary covariates the algorithm reads, in schema order.
    pub fn for_algorithm(algorithm: &BoundAlgorithm, schema: &Schema) -> Self {
        Stratifier {
            covariates: algorithm
                .covariate_indices()
                .iter()
                .filter(|&&i| matches!(schema.get(i).kind, CovariateKind::Binary))
                .map(|&i| schema.get(i).name.clone())
                .collect(),
            cuts: BTreeMap::new(),
        }
    }

    pub fn assign(&self, cohort: &CohortTable) -> Result<Strata> {
        let schema = cohort.schema();
        let mut cols = Vec::with_capacity(self.covariates.len());
        for name in &self.covariates {
            let i = schema.require(name)?;
            let cuts = self.cuts.get(name);
            if matches!(schema.get(i).kind, CovariateKind::Continuous) && cuts.is_none() {
                return Err(Error::validation(
                    format!("stratifier.{name}"),
                    "continuous covariate needs explicit cut points",
                ));
            }
            cols.push((i, name.as_str(), cuts));
        }
        let mut labels: Vec<String> = Vec::new();
        let mut index: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
        let mut unit_stratum = Vec::with_capacity(cohort.len());
        for u in cohort.units() {
            let key: Vec<i64> = cols
                .iter()
                .map(|(i, _, cuts)| match cuts {
                    Some(c) => c.iter().filter(|&&cut| u.covariates[*i] > cut).count() as i64,
                    None => u.covariates[*i] as i64,
                })
                .collect();
            let next = index.len();
            let s = *index.entry(key.clone()).or_insert_with(|| {
                labels.push(if cols.is_empty() {
                    "all".to_string()
                } else {
                    cols.iter()
                        .zip(&key)
                        .map(|((_, n, cuts), v)| match cuts {
                            Some(_) => format!("{n}:bin{v}"),
                            None => format!("{n}={v}"),
                        })
                        .collect::<Vec<_>>()
                        .join(",")
                });
                next
            });
            unit_stratum.push(s);
        }
        Ok(Strata { labels, unit_stratum })
    }
}

/// Stratum membership, labels in order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct Strata {
    pub labels: Vec<String>,
    pub unit_stratum: Vec<usize>,
}

impl Strata {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.len()];
        for &i in &self.unit_stratum {
            s[i] += 1;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityCell {
    pub stratum: String,
    pub version: VersionId,
    pub count: usize,
    /// Units in the stratum with an observed version.
    pub stratum_size: usize,
    pub probability: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub epsilon: f64,
    pub cells: Vec<PositivityCell>,
}

impl PositivityReport {
    pub fn flags(&self) -> Vec<String> {
        self.cells
            .iter()
            .filter(|c| c.flagged)
            .map(|c| format!("{}/{}", c.stratum, c.version))
            .collect()
    }

    pub fn count(&self, stratum: usize, version: usize, n_versions: usize) -> usize {
        self.cells[stratum * n_versions + version].count
    }
}

/// One cell per (stratum, version); cells are flagged when empty or when the
/// version's share of the stratum is outside `(epsilon, 1 - epsilon)`.
///
/// # Panics
/// When `epsilon` is outside `[0, 0.5)`.
pub fn positivity_check(cohort: &CohortTable, strata: &Strata, epsilon: f64) -> PositivityReport {
    assert!((0.0..0.5).contains(&epsilon), "positivity epsilon must be in [0, 0.5)");
    let nv = cohort.arm_spec().n_versions();
    let mut counts = vec![vec![0usize; nv]; strata.len()];
    for (u, &s) in cohort.units().iter().zip(&strata.unit_stratum) {
        if let Some(k) = u.version {
            counts[s][k] += 1;
        }
    }
    let mut cells = Vec::with_capacity(strata.len() * nv);
    for (s, row) in counts.iter().enumerate() {
        let size: usize = row.iter().sum();
        for (k, &count) in row.iter().enumerate() {
            let probability = if size == 0 { 0.0 } else { count as f64 / size as f64 };
            let flagged = count == 0 || probability <= epsilon || probability >= 1.0 - epsilon;
            cells.push(PositivityCell {
                stratum: strata.labels[s].clone(),
                version: cohort.arm_spec().version(k).clone(),
                count,
                stratum_size: size,
                probability,
                flagged,
            });
        }
    }
    PositivityReport { epsilon, cells }
}
