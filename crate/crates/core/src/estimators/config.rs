use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::glm::{Formula, Term, VERSION_FACTOR};
use crate::model::{Role, Schema, Stratifier, VersionDistribution, VersionId, DEFAULT_POSITIVITY_EPSILON};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimand {
    /// PM arm versus a single control version.
    #[serde(rename = "CE1")]
    Ce1,
    /// PM arm versus the physician's assignment of treated versions.
    #[serde(rename = "CE2")]
    Ce2,
    /// PM arm versus uniform random assignment of treated versions.
    #[serde(rename = "CE3")]
    Ce3,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Ce1, Estimand::Ce2, Estimand::Ce3];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE1" => Ok(Estimand::Ce1),
            "CE2" => Ok(Estimand::Ce2),
            "CE3" => Ok(Estimand::Ce3),
            _ => Err(Error::validation("estimand", format!("unknown estimand {s:?}"))),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ce1 => "CE1",
            Estimand::Ce2 => "CE2",
            Estimand::Ce3 => "CE3",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Oracle: averages of counterfactual outcomes.
    True,
    Naive,
    Std,
    Ipw,
    Tmle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::True, Method::Naive, Method::Std, Method::Ipw, Method::Tmle];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "oracle" => Ok(Method::True),
            "naive" => Ok(Method::Naive),
            "std" | "standardization" => Ok(Method::Std),
            "ipw" => Ok(Method::Ipw),
            "tmle" => Ok(Method::Tmle),
            _ => Err(Error::validation("method", format!("unknown method {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::True => "true",
            Method::Naive => "naive",
            Method::Std => "std",
            Method::Ipw => "ipw",
            Method::Tmle => "tmle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome or treatment model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Glm { formula: Formula },
    Forest(ForestConfig),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityForm {
    /// One multinomial over all versions; needs disjoint version sets.
    #[default]
    Joint,
    /// P[A | C] · P[K | A, C].
    Factored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpwOptions {
    pub stabilized: bool,
    /// Lower and upper weight percentiles (0–100) to clip at.
    pub truncation: Option<(f64, f64)>,
    /// Propensities are floored here before inversion.
    pub propensity_floor: f64,
}

impl Default for IpwOptions {
    fn default() -> Self {
        IpwOptions {
            stabilized: false,
            truncation: None,
            propensity_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmleOptions {
    /// Outcome bounds for continuous outcomes; defaults to the observed
    /// range widened by 10% on each side.
    pub bounds: Option<(f64, f64)>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityPolicy {
    /// Empty cells in a target's support abort that estimate.
    #[default]
    Error,
    /// Empty cells are reported as flags and the model extrapolates.
    Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositivityOptions {
    pub epsilon: f64,
    pub policy: PositivityPolicy,
    /// Defaults to the binary covariates read by the algorithm.
    pub stratifier: Option<Stratifier>,
}

impl Default for PositivityOptions {
    fn default() -> Self {
        PositivityOptions {
            epsilon: DEFAULT_POSITIVITY_EPSILON,
            policy: PositivityPolicy::Error,
            stratifier: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Defaults to `K` crossed with every C covariate's main effect.
    pub outcome_model: Option<ModelSpec>,
    /// Defaults to main effects of every covariate.
    pub treatment_model: Option<ModelSpec>,
    pub propensity: PropensityForm,
    pub ipw: IpwOptions,
    pub tmle: TmleOptions,
    pub positivity: PositivityOptions,
    /// CE1 control version; defaults to the first control version.
    pub ce1_control: Option<VersionId>,
    /// Physician distribution used by the oracle for CE2. Defaults to the
    /// empirical stratum frequencies of the treated arm.
    pub physician: Option<VersionDistribution>,
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = self.positivity.epsilon;
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::validation("positivity.epsilon", "must be in [0, 0.5)"));
        }
        if !(self.ipw.propensity_floor > 0.0 && self.ipw.propensity_floor < 1.0) {
            return Err(Error::validation("ipw.propensity_floor", "must be in (0, 1)"));
        }
        if let Some((lo, hi)) = self.ipw.truncation {
            if !(0.0 <= lo && lo < hi && hi <= 100.0) {
                return Err(Error::validation("ipw.truncation", "need 0 <= lower < upper <= 100"));
            }
        }
        if let Some((lo, hi)) = self.tmle.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation("tmle.bounds", "need finite lower < upper"));
            }
        }
        for (field, spec) in [("outcome_model", &self.outcome_model), ("treatment_model", &self.treatment_model)] {
            if let Some(ModelSpec::Forest(f)) = spec {
                f.validate().map_err(|e| Error::validation(field, e.to_string()))?;
            }
        }
        if let Some(ModelSpec::Glm { formula }) = &self.treatment_model {
            if formula.mentions(VERSION_FACTOR) || formula.mentions(crate::glm::ARM_FACTOR) {
                return Err(Error::validation("treatment_model.formula", "may not mention K or A"));
            }
        }
        Ok(())
    }

    pub fn outcome_spec(&self, schema: &Schema) -> ModelSpec {
        self.outcome_model.clone().unwrap_or_else(|| ModelSpec::Glm {
            formula: default_outcome_formula(schema),
        })
    }

    pub fn treatment_spec(&self, schema: &Schema) -> ModelSpec {
        self.treatment_model.clone().unwrap_or_else(|| ModelSpec::Glm {
            formula: Formula::new(schema.covariates.iter().map(|c| Term::Main(c.name.clone())).collect()),
        })
    }
}

/// `K + C_1 + … + K:C_1 + …`: one linear model in C per version.
pub fn default_outcome_formula(schema: &Schema) -> Formula {
    let cs: Vec<&str> = schema
        .covariates
        .iter()
        .filter(|c| c.role == Role::C)
        .map(|c| c.name.as_str())
        .collect();
    let mut terms = vec![Term::Main(VERSION_FACTOR.into())];
    terms.extend(cs.iter().map(|c| Term::Main(c.to_string())));
    terms.extend(
        cs.iter()
            .map(|c| Term::Interaction(vec![VERSION_FACTOR.into(), c.to_string()])),
    );
    Formula::new(terms)
}
