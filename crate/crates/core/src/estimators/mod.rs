//! Naive, oracle, standardization (g-formula), inverse probability weighting
//! and TMLE estimators of arm means and of the composite effects CE1–CE3.
//!
//! An [`Estimator`] wraps one eligible cohort. Outcome and treatment models
//! are fitted lazily the first time a method needs them and reused for every
//! mean computed on that cohort.

mod config;
mod nuisance;
mod tmle;

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use config::{
    default_outcome_formula, Estimand, EstimationConfig, IpwOptions, Method, ModelSpec, PositivityOptions,
    PositivityPolicy, PropensityForm, TmleOptions,
};
pub use tmle::{solve_fluctuation, Fluctuation};

use crate::error::{Error, Result};
use crate::model::{
    positivity_check, Arm, BoundAlgorithm, CohortTable, PositivityReport, Strata, Stratifier, VersionDistribution,
};
use nuisance::{ArmOutcomeFit, OutcomeFit, PropensityFit};

/// A point estimate of one regime mean with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// TMLE fluctuation parameter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// IPW weight summary before truncation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_mean: Option<f64>,
    pub flags: Vec<String>,
}

impl Diagnostics {
    fn flag(&mut self, f: impl Into<String>) {
        let f = f.into();
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }

    fn absorb(&mut self, other: &Diagnostics) {
        for f in &other.flags {
            self.flag(f.clone());
        }
        self.weight_min = min_opt(self.weight_min, other.weight_min);
        self.weight_max = max_opt(self.weight_max, other.weight_max);
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// A target treatment regime for one arm.
#[derive(Clone, Debug, PartialEq)]
pub enum Regime {
    /// Everyone receives version `k` (global version index).
    Version(usize),
    /// Version drawn from `g[i]` (columns follow the arm's version range).
    Distribution {
        arm: Arm,
        g: Vec<Vec<f64>>,
        covariate_free: bool,
    },
    /// Arm `a` with versions as the physician assigns them.
    Overall(Arm),
}

/// Difference of two regime means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub pm_mean: f64,
    pub control_mean: f64,
    pub effect: f64,
    pub diagnostics: EffectDiagnostics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectDiagnostics {
    /// TMLE fluctuation for the PM arm.
    pub epsilon: Option<f64>,
    /// TMLE fluctuation for the control arm.
    pub control_epsilon: Option<f64>,
    pub weight_max: Option<f64>,
    pub flags: Vec<String>,
}

/// One (estimand, method) cell of an [`EstimateReport`]; failed cells keep
/// the error message and have no values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub pm_mean: Option<f64>,
    pub control_mean: Option<f64>,
    pub effect: Option<f64>,
    pub diagnostics: EffectDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<Result<EffectEstimate>> for EffectReport {
    fn from(r: Result<EffectEstimate>) -> Self {
        match r {
            Ok(e) => EffectReport {
                pm_mean: Some(e.pm_mean),
                control_mean: Some(e.control_mean),
                effect: Some(e.effect),
                diagnostics: e.diagnostics,
                error: None,
            },
            Err(e) => EffectReport {
                error: Some(e.to_string()),
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n_units: usize,
    pub estimates: BTreeMap<Estimand, BTreeMap<Method, EffectReport>>,
    pub positivity: PositivityReport,
}

/// Estimators bound to one eligible cohort.
pub struct Estimator<'a> {
    cohort: &'a CohortTable,
    algorithm: &'a BoundAlgorithm,
    config: &'a EstimationConfig,
    strata: Strata,
    positivity: PositivityReport,
    /// Units with an observed version and outcome, per version.
    version_counts: Vec<usize>,
    outcome: OnceCell<Result<OutcomeFit>>,
    arm_outcome: OnceCell<Result<ArmOutcomeFit>>,
    propensity: OnceCell<Result<PropensityFit>>,
}

impl<'a> Estimator<'a> {
    /// `cohort` must already be restricted to units eligible for `algorithm`.
    pub fn new(cohort: &'a CohortTable, algorithm: &'a BoundAlgorithm, config: &'a EstimationConfig) -> Result<Self> {
        config.validate()?;
        if cohort.is_empty() {
            return Err(Error::NoEligibleUnits);
        }
        if let Some(u) = cohort.units().iter().find(|u| algorithm.recommend(&u.covariates).is_none()) {
            return Err(Error::Schema(format!("unit {} is not eligible; restrict the cohort first", u.unit_id)));
        }
        let stratifier = match &config.positivity.stratifier {
            Some(s) => s.clone(),
            None => Stratifier::for_algorithm(algorithm, cohort.schema()),
        };
        let strata = stratifier.assign(cohort)?;
        let positivity = positivity_check(cohort, &strata, config.positivity.epsilon);
        let mut version_counts = vec![0; cohort.arm_spec().n_versions()];
        for u in cohort.units() {
            if let (Some(k), Some(_)) = (u.version, u.outcome) {
                version_counts[k] += 1;
            }
        }
        Ok(Estimator {
            cohort,
            algorithm,
            config,
            strata,
            positivity,
            version_counts,
            outcome: OnceCell::new(),
            arm_outcome: OnceCell::new(),
            propensity: OnceCell::new(),
        })
    }

    pub fn cohort(&self) -> &CohortTable {
        self.cohort
    }

    pub fn positivity(&self) -> &PositivityReport {
        &self.positivity
    }

    fn outcome_fit(&self) -> Result<&OutcomeFit> {
        self.outcome
            .get_or_init(|| nuisance::fit_outcome(self.cohort, &self.config.outcome_spec(self.cohort.schema())))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn arm_outcome_fit(&self) -> Result<&ArmOutcomeFit> {
        self.arm_outcome
            .get_or_init(|| nuisance::fit_arm_outcome(self.cohort, &self.config.outcome_spec(self.cohort.schema())))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn propensity_fit(&self) -> Result<&PropensityFit> {
        self.propensity
            .get_or_init(|| {
                nuisance::fit_propensity(
                    self.cohort,
                    &self.config.treatment_spec(self.cohort.schema()),
                    self.config.propensity,
                )
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Resolves a version distribution for `arm` on this cohort.
    pub fn regime(&self, g: &VersionDistribution, arm: Arm) -> Result<Regime> {
        let rows = g.resolve(self.cohort, arm, self.algorithm, &self.strata)?;
        let covariate_free = g.is_covariate_free();
        Ok(Regime::Distribution {
            arm,
            g: rows,
            covariate_free,
        })
    }

    /// The PM arm: all mass on r(C).
    pub fn pm_regime(&self) -> Result<Regime> {
        self.regime(&VersionDistribution::DiracAtRule, Arm::Treated)
    }

    fn version_label(&self, k: usize) -> String {
        self.cohort.arm_spec().version(k).to_string()
    }

    /// Version mass `g(k | c_i)`, zero outside the regime's arm.
    fn mass(&self, regime: &Regime, i: usize, k: usize) -> f64 {
        let arms = self.cohort.arm_spec();
        match regime {
            Regime::Version(v) => f64::from(*v == k),
            Regime::Distribution { arm, g, .. } => {
                let r = arms.arm_range(*arm);
                if r.contains(&k) {
                    g[i][k - r.start]
                } else {
                    0.0
                }
            }
            Regime::Overall(a) => f64::from(arms.arm_of(k) == *a),
        }
    }

    fn support(&self, regime: &Regime) -> Vec<usize> {
        let arms = self.cohort.arm_spec();
        match regime {
            Regime::Version(k) => vec![*k],
            Regime::Distribution { arm, g, .. } => {
                let r = arms.arm_range(*arm);
                r.clone().filter(|k| g.iter().any(|row| row[k - r.start] > 0.0)).collect()
            }
            Regime::Overall(a) => arms.arm_range(*a).collect(),
        }
    }

    /// Every version the regime uses must have been observed.
    fn require_cells(&self, regime: &Regime) -> Result<()> {
        let arms = self.cohort.arm_spec();
        match regime {
            Regime::Overall(a) => {
                if arms.arm_range(*a).all(|k| self.version_counts[k] == 0) {
                    return Err(Error::EmptyCell(format!("no unit with A={} and an outcome", a.code())));
                }
            }
            _ => {
                let empty: Vec<String> = self
                    .support(regime)
                    .into_iter()
                    .filter(|&k| self.version_counts[k] == 0)
                    .map(|k| format!("A={}, K={}", arms.arm_of(k).code(), self.version_label(k)))
                    .collect();
                if !empty.is_empty() {
                    return Err(Error::EmptyCell(empty.join("; ")));
                }
            }
        }
        Ok(())
    }

    /// Stratum-level positivity for the cells a model-based estimator leans
    /// on: empty cells are errors (or flags, per policy), near-empty cells
    /// are flags.
    fn check_positivity(&self, regime: &Regime, diag: &mut Diagnostics) -> Result<()> {
        let arms = self.cohort.arm_spec();
        let nv = arms.n_versions();
        let mut empty = BTreeSet::new();
        let mut thin = BTreeSet::new();
        let mut used = vec![vec![false; nv]; self.strata.len()];
        for (i, &s) in self.strata.unit_stratum.iter().enumerate() {
            for k in 0..nv {
                if self.mass(regime, i, k) > 0.0 {
                    used[s][k] = true;
                }
            }
        }
        for (s, row) in used.iter().enumerate() {
            let label = &self.strata.labels[s];
            if let Regime::Overall(a) = regime {
                let count: usize = arms.arm_range(*a).map(|k| self.positivity.count(s, k, nv)).sum();
                if count == 0 {
                    empty.insert(format!("{label}/A={}", a.code()));
                }
                continue;
            }
            for (k, &u) in row.iter().enumerate() {
                if !u {
                    continue;
                }
                let cell = &self.positivity.cells[s * nv + k];
                if cell.count == 0 {
                    empty.insert(format!("{label}/{}", cell.version));
                } else if cell.flagged {
                    thin.insert(format!("{label}/{}", cell.version));
                }
            }
        }
        for t in thin {
            diag.flag(format!("positivity:{t}"));
        }
        if !empty.is_empty() {
            match self.config.positivity.policy {
                PositivityPolicy::Error => return Err(Error::Positivity(empty.into_iter().collect())),
                PositivityPolicy::Flag => {
                    for e in empty {
                        diag.flag(format!("positivity-empty:{e}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Units contributing to a weighted regime mean, with the regime mass at
    /// the observed version: `(unit, mass, observed version)`.
    fn contributions(&self, regime: &Regime) -> Vec<(usize, f64, usize)> {
        self.cohort
            .units()
            .iter()
            .enumerate()
            .filter_map(|(i, u)| {
                let k = u.version?;
                u.outcome?;
                let m = self.mass(regime, i, k);
                (m > 0.0).then_some((i, m, k))
            })
            .collect()
    }

    /// Covariate-free distributions are combined from per-version means
    /// with weights equal to the cohort-average mass.
    fn combine<F>(&self, regime: &Regime, mut per_version: F) -> Option<Result<MeanEstimate>>
    where
        F: FnMut(usize) -> Result<MeanEstimate>,
    {
        let Regime::Distribution {
            arm,
            g,
            covariate_free: true,
        } = regime
        else {
            return None;
        };
        let range = self.cohort.arm_spec().arm_range(*arm);
        let n = g.len() as f64;
        let mut value = 0.0;
        let mut diag = Diagnostics::default();
        for (j, k) in range.enumerate() {
            let w: f64 = g.iter().map(|row| row[j]).sum::<f64>() / n;
            if w == 0.0 {
                continue;
            }
            match per_version(k) {
                Ok(m) => {
                    value += w * m.value;
                    diag.absorb(&m.diagnostics);
                }
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(MeanEstimate {
            value,
            diagnostics: diag,
        }))
    }

    /// Unadjusted mean of observed outcomes under the regime's selector.
    pub fn naive_mean(&self, regime: &Regime) -> Result<MeanEstimate> {
        if let Some(r) = self.combine(regime, |k| self.naive_mean(&Regime::Version(k))) {
            return r;
        }
        let terms = self.contributions(regime);
        if terms.is_empty() {
            return Err(Error::EmptyCell(format!("no unit matches the {} selector", self.describe(regime))));
        }
        let units = self.cohort.units();
        let (num, den) = terms
            .iter()
            .fold((0.0, 0.0), |(n, d), &(i, m, _)| (n + m * units[i].outcome.unwrap_or(0.0), d + m));
        Ok(MeanEstimate {
            value: num / den,
            diagnostics: Diagnostics::default(),
        })
    }

    fn describe(&self, regime: &Regime) -> String {
        match regime {
            Regime::Version(k) => format!("K={}", self.version_label(*k)),
            Regime::Distribution { arm, .. } => format!("A={} distribution", arm.code()),
            Regime::Overall(a) => format!("A={}", a.code()),
        }
    }

    /// Average of counterfactual outcomes under the regime. The physician
    /// regime uses the configured physician distribution.
    pub fn oracle_mean(&self, regime: &Regime) -> Result<MeanEstimate> {
        if let Regime::Overall(a) = regime {
            let g = self
                .config
                .physician
                .clone()
                .unwrap_or(VersionDistribution::EmpiricalPhysician);
            return self.oracle_mean(&self.regime(&g, *a)?);
        }
        let nv = self.cohort.arm_spec().n_versions();
        let mut missing = BTreeSet::new();
        let mut total = 0.0;
        for (i, u) in self.cohort.units().iter().enumerate() {
            let cf = u.counterfactuals.as_deref();
            for k in 0..nv {
                let m = self.mass(regime, i, k);
                if m == 0.0 {
                    continue;
                }
                match cf.and_then(|c| c[k]) {
                    Some(y) => total += m * y,
                    None => {
                        missing.insert(self.version_label(k));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingCounterfactual(missing.into_iter().collect()));
        }
        Ok(MeanEstimate {
            value: total / self.cohort.len() as f64,
            diagnostics: Diagnostics::default(),
        })
    }

    fn model_flags(&self, diag: &mut Diagnostics, flags: &[String]) {
        for f in flags {
            diag.flag(f.clone());
        }
    }

    /// Standardization: model predictions under the regime averaged over
    /// every unit's covariates.
    pub fn std_mean(&self, regime: &Regime) -> Result<MeanEstimate> {
        self.require_cells(regime)?;
        let mut diag = Diagnostics::default();
        self.check_positivity(regime, &mut diag)?;
        let n = self.cohort.len();
        let value = match regime {
            Regime::Overall(a) => {
                let fit = self.arm_outcome_fit()?;
                self.model_flags(&mut diag, &fit.flags);
                let mu = fit.mu[a.code() as usize]
                    .as_ref()
                    .ok_or_else(|| Error::EmptyCell(format!("no outcome model for A={}", a.code())))?;
                mu.iter().sum::<f64>() / n as f64
            }
            _ => {
                let fit = self.outcome_fit()?;
                self.model_flags(&mut diag, &fit.flags);
                let mut total = 0.0;
                for k in self.support(regime) {
                    let mu = fit.mu[k].as_ref().ok_or_else(|| {
                        Error::EmptyCell(format!("no outcome model for K={}", self.version_label(k)))
                    })?;
                    total += (0..n).map(|i| self.mass(regime, i, k) * mu[i]).sum::<f64>();
                }
                total / n as f64
            }
        };
        Ok(MeanEstimate {
            value,
            diagnostics: diag,
        })
    }

    /// Floored propensity of unit `i` for the regime's denominator: the
    /// joint f(a, K_i | c) or, for the physician regime, f(a | c).
    fn propensity_of(&self, fit: &PropensityFit, regime: &Regime, i: usize, k: usize, diag: &mut Diagnostics) -> f64 {
        let p = match regime {
            Regime::Overall(a) => self.cohort.arm_spec().arm_range(*a).map(|j| fit.f[i][j]).sum(),
            _ => fit.f[i][k],
        };
        let floor = self.config.ipw.propensity_floor;
        if p < floor {
            diag.flag("ipw:propensity-floored");
            floor
        } else {
            p
        }
    }

    /// Horvitz–Thompson ratio estimator with weights g(K|c)/f(A,K|c).
    pub fn ipw_mean(&self, regime: &Regime) -> Result<MeanEstimate> {
        if let Some(r) = self.combine(regime, |k| self.ipw_mean(&Regime::Version(k))) {
            return r;
        }
        self.require_cells(regime)?;
        let mut diag = Diagnostics::default();
        self.check_positivity(regime, &mut diag)?;
        let fit = self.propensity_fit()?;
        self.model_flags(&mut diag, &fit.flags);
        let terms = self.contributions(regime);
        if terms.is_empty() {
            return Err(Error::EmptyCell(format!("no unit matches the {} selector", self.describe(regime))));
        }
        let mut weights: Vec<f64> = terms
            .iter()
            .map(|&(i, m, k)| m / self.propensity_of(fit, regime, i, k, &mut diag))
            .collect();
        if self.config.ipw.stabilized {
            let marginal = self.marginal(regime);
            for (w, &(_, _, k)) in weights.iter_mut().zip(&terms) {
                *w *= match regime {
                    Regime::Overall(_) => marginal,
                    _ => self.version_counts[k] as f64 / self.n_observed() as f64,
                };
            }
        }
        diag.weight_min = weights.iter().copied().reduce(f64::min);
        diag.weight_max = weights.iter().copied().reduce(f64::max);
        diag.weight_mean = Some(weights.iter().sum::<f64>() / weights.len() as f64);
        if let Some((lo, hi)) = self.config.ipw.truncation {
            let (a, b) = (percentile(&weights, lo), percentile(&weights, hi));
            let mut clipped = false;
            for w in weights.iter_mut() {
                let c = w.clamp(a, b);
                clipped |= c != *w;
                *w = c;
            }
            if clipped {
                diag.flag("ipw:truncated");
            }
        }
        let units = self.cohort.units();
        let (num, den) = terms
            .iter()
            .zip(&weights)
            .fold((0.0, 0.0), |(n, d), (&(i, _, _), w)| (n + w * units[i].outcome.unwrap_or(0.0), d + w));
        Ok(MeanEstimate {
            value: num / den,
            diagnostics: diag,
        })
    }

    fn n_observed(&self) -> usize {
        self.version_counts.iter().sum()
    }

    /// Marginal P[A = a] among units with an observed version and outcome.
    fn marginal(&self, regime: &Regime) -> f64 {
        let Regime::Overall(a) = regime else { return 1.0 };
        let c: usize = self.cohort.arm_spec().arm_range(*a).map(|k| self.version_counts[k]).sum();
        c as f64 / self.n_observed() as f64
    }

    /// Targeted maximum likelihood: the standardization plug-in after a
    /// one-parameter logistic fluctuation of the outcome model along the
    /// clever covariate.
    pub fn tmle_mean(&self, regime: &Regime) -> Result<MeanEstimate> {
        self.require_cells(regime)?;
        let mut diag = Diagnostics::default();
        self.check_positivity(regime, &mut diag)?;
        let (lo, hi) = tmle::bounds(self.cohort, self.config.tmle.bounds)?;
        let scale = |y: f64| tmle::clip((y - lo) / (hi - lo));
        let pfit = self.propensity_fit()?;
        self.model_flags(&mut diag, &pfit.flags);
        let n = self.cohort.len();
        let units = self.cohort.units();
        let terms = self.contributions(regime);

        // Initial predictions at the observed treatment, and at the regime
        // as (mass, prediction) pairs per unit.
        let (q_obs, targets): (Vec<f64>, Vec<Vec<(f64, f64)>>) = match regime {
            Regime::Overall(a) => {
                let fit = self.arm_outcome_fit()?;
                self.model_flags(&mut diag, &fit.flags);
                let mu = fit.mu[a.code() as usize]
                    .as_ref()
                    .ok_or_else(|| Error::EmptyCell(format!("no outcome model for A={}", a.code())))?;
                (
                    terms.iter().map(|&(i, _, _)| scale(mu[i])).collect(),
                    (0..n).map(|i| vec![(1.0, scale(mu[i]))]).collect(),
                )
            }
            _ => {
                let fit = self.outcome_fit()?;
                self.model_flags(&mut diag, &fit.flags);
                let support = self.support(regime);
                let mut cols = BTreeMap::new();
                for &k in &support {
                    let mu = fit.mu[k].as_ref().ok_or_else(|| {
                        Error::EmptyCell(format!("no outcome model for K={}", self.version_label(k)))
                    })?;
                    cols.insert(k, mu);
                }
                (
                    terms.iter().map(|&(i, _, k)| scale(cols[&k][i])).collect(),
                    (0..n)
                        .map(|i| {
                            support
                                .iter()
                                .map(|&k| (self.mass(regime, i, k), scale(cols[&k][i])))
                                .filter(|(m, _)| *m > 0.0)
                                .collect()
                        })
                        .collect(),
                )
            }
        };
        let h: Vec<f64> = terms
            .iter()
            .map(|&(i, m, k)| m / self.propensity_of(pfit, regime, i, k, &mut diag))
            .collect();
        let ystar: Vec<f64> = terms
            .iter()
            .map(|&(i, _, _)| (units[i].outcome.unwrap_or(0.0) - lo) / (hi - lo))
            .collect();
        let offset: Vec<f64> = q_obs.iter().map(|q| tmle::logit(*q)).collect();
        let fl = solve_fluctuation(&h, &offset, &ystar);
        for f in &fl.flags {
            diag.flag(f.clone());
        }
        let eps = fl.epsilon;
        let total: f64 = targets
            .iter()
            .flatten()
            .map(|&(m, q)| m * tmle::expit(tmle::logit(q) + eps))
            .sum();
        diag.epsilon = Some(eps);
        Ok(MeanEstimate {
            value: lo + (hi - lo) * total / n as f64,
            diagnostics: diag,
        })
    }

    /// Mean of `regime` by `method`.
    pub fn mean(&self, method: Method, regime: &Regime) -> Result<MeanEstimate> {
        match method {
            Method::True => self.oracle_mean(regime),
            Method::Naive => self.naive_mean(regime),
            Method::Std => self.std_mean(regime),
            Method::Ipw => self.ipw_mean(regime),
            Method::Tmle => self.tmle_mean(regime),
        }
    }

    /// The control regime of an estimand.
    pub fn control_regime(&self, estimand: Estimand) -> Result<Regime> {
        let arms = self.cohort.arm_spec();
        match estimand {
            Estimand::Ce1 => {
                let k = match &self.config.ce1_control {
                    Some(v) => arms
                        .index_of(v)
                        .ok_or_else(|| Error::validation("ce1_control", format!("unknown version {v}")))?,
                    None => arms.arm_range(Arm::Control).start,
                };
                Ok(Regime::Version(k))
            }
            Estimand::Ce2 => Ok(Regime::Overall(Arm::Treated)),
            Estimand::Ce3 => self.regime(&VersionDistribution::Uniform, Arm::Treated),
        }
    }

    pub fn estimate_effect(&self, estimand: Estimand, method: Method) -> Result<EffectEstimate> {
        let pm = self.mean(method, &self.pm_regime()?)?;
        let control = self.mean(method, &self.control_regime(estimand)?)?;
        let mut flags = pm.diagnostics.flags.clone();
        for f in &control.diagnostics.flags {
            if !flags.contains(f) {
                flags.push(f.clone());
            }
        }
        Ok(EffectEstimate {
            pm_mean: pm.value,
            control_mean: control.value,
            effect: pm.value - control.value,
            diagnostics: EffectDiagnostics {
                epsilon: pm.diagnostics.epsilon,
                control_epsilon: control.diagnostics.epsilon,
                weight_max: max_opt(pm.diagnostics.weight_max, control.diagnostics.weight_max),
                flags,
            },
        })
    }

    /// Every requested (estimand, method) cell; failures are recorded in the
    /// cell rather than aborting the report.
    pub fn report(&self, estimands: &[Estimand], methods: &[Method]) -> EstimateReport {
        let mut estimates = BTreeMap::new();
        for &e in estimands {
            let row: BTreeMap<Method, EffectReport> =
                methods.iter().map(|&m| (m, self.estimate_effect(e, m).into())).collect();
            estimates.insert(e, row);
        }
        EstimateReport {
            n_units: self.cohort.len(),
            estimates,
            positivity: self.positivity.clone(),
        }
    }
}

/// Linear-interpolation percentile, `q` in [0, 100].
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests;
