//! Study definitions (covariates, arms, algorithm, estimation options) and
//! their JSON form.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimationConfig;
use crate::model::{ArmSpec, BoundAlgorithm, OutcomeKind, PmAlgorithm, Schema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    #[serde(default)]
    pub name: String,
    pub covariates: Schema,
    pub arms: ArmSpec,
    pub algorithm: PmAlgorithm,
    #[serde(default)]
    pub outcome: OutcomeKind,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

/// A study with names resolved to indices.
#[derive(Clone, Debug)]
pub struct BoundStudy {
    pub schema: Arc<Schema>,
    pub arms: Arc<ArmSpec>,
    pub algorithm: BoundAlgorithm,
}

impl Study {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Study = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.covariates.validate()?;
        self.arms.validate()?;
        self.estimation.validate()?;
        self.bind()?;
        Ok(())
    }

    pub fn bind(&self) -> Result<BoundStudy> {
        let algorithm = self.algorithm.bind(&self.covariates, &self.arms)?;
        Ok(BoundStudy {
            schema: Arc::new(self.covariates.clone()),
            arms: Arc::new(self.arms.clone()),
            algorithm,
        })
    }
}
