//! Outcome and treatment (propensity) models fitted on one cohort, kept as
//! prediction matrices.

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, Response};
use crate::glm::{
    fit_logistic, fit_multinomial, fit_ols, Encoder, Formula, ARM_FACTOR, VERSION_FACTOR,
};
use crate::model::{Arm, CohortTable, OutcomeKind};

use super::config::{ModelSpec, PropensityForm};

/// Predicted outcomes `mu[k][i]` at every version for every unit; `None`
/// for versions the model could not be fitted for.
pub(crate) struct OutcomeFit {
    pub mu: Vec<Option<Vec<f64>>>,
    pub flags: Vec<String>,
}

/// Predicted outcomes `mu[a][i]` at each arm, ignoring versions.
pub(crate) struct ArmOutcomeFit {
    pub mu: [Option<Vec<f64>>; 2],
    pub flags: Vec<String>,
}

/// Joint propensities `f[i][k]` = P[A = arm(k), K = k | c_i].
pub(crate) struct PropensityFit {
    pub f: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

fn observed(cohort: &CohortTable) -> Vec<(usize, usize, f64)> {
    cohort
        .units()
        .iter()
        .enumerate()
        .filter_map(|(i, u)| Some((i, u.version?, u.outcome?)))
        .collect()
}

fn glm_predictions(
    cohort: &CohortTable,
    encoder: &Encoder,
    train: &[(usize, Option<usize>, Option<Arm>, f64)],
    targets: &[(Option<usize>, Option<Arm>)],
    label: &str,
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let units = cohort.units();
    let x = encoder.design(train.iter().map(|(i, k, a, _)| (units[*i].covariates.as_slice(), *k, *a)))?;
    let y: Vec<f64> = train.iter().map(|t| t.3).collect();
    let mut flags = Vec::new();
    let predict: Box<dyn Fn(&[f64]) -> Result<f64>> = match cohort.outcome_kind() {
        OutcomeKind::Continuous => {
            let m = fit_ols(&x, &y)?;
            flags.extend(m.info.flags(label));
            Box::new(move |r| m.predict(r))
        }
        OutcomeKind::Binary => {
            let m = fit_logistic(&x, &y)?;
            flags.extend(m.info.flags(label));
            Box::new(move |r| m.predict(r))
        }
    };
    let mut buf = Vec::with_capacity(encoder.width());
    let mut out = Vec::with_capacity(targets.len());
    for (k, a) in targets {
        let mut col = Vec::with_capacity(units.len());
        for u in units {
            encoder.encode_into(&u.covariates, *k, *a, &mut buf);
            col.push(predict(&buf)?);
        }
        out.push(col);
    }
    Ok((out, flags))
}

fn forest_regression(
    cohort: &CohortTable,
    rows: &[usize],
    y: &[f64],
    config: &ForestConfig,
    seed_offset: u64,
    label: &str,
    flags: &mut Vec<String>,
) -> Result<Vec<f64>> {
    let units = cohort.units();
    let mut cfg = config.clone();
    cfg.seed = cfg.seed.wrapping_add(seed_offset);
    if rows.len() < 2 * cfg.min_leaf {
        cfg.min_leaf = (rows.len() / 2).max(1);
        flags.push(format!("{label}:min_leaf-reduced"));
    }
    if rows.len() < 2 {
        // A single observation: its value is the prediction everywhere.
        return Ok(vec![y[0]; units.len()]);
    }
    if let Some(m) = cfg.mtry {
        cfg.mtry = Some(m.min(cohort.schema().len()));
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| units[i].covariates.clone()).collect();
    let model = fit_forest(&x, Response::Regression(y), &cfg)?;
    if model.constant_features {
        flags.push(format!("{label}:constant-features"));
    }
    units.iter().map(|u| model.predict(&u.covariates)).collect()
}

pub(crate) fn fit_outcome(cohort: &CohortTable, spec: &ModelSpec) -> Result<OutcomeFit> {
    let arms = cohort.arm_spec();
    let nv = arms.n_versions();
    let obs = observed(cohort);
    if obs.is_empty() {
        return Err(Error::EmptyCell("no unit with an observed version and outcome".into()));
    }
    match spec {
        ModelSpec::Glm { formula } => {
            let encoder = Encoder::new(formula, cohort.schema(), arms)?;
            let train: Vec<_> = obs
                .iter()
                .map(|&(i, k, y)| (i, Some(k), Some(arms.arm_of(k)), y))
                .collect();
            let targets: Vec<_> = (0..nv).map(|k| (Some(k), Some(arms.arm_of(k)))).collect();
            let (mu, flags) = glm_predictions(cohort, &encoder, &train, &targets, "outcome")?;
            Ok(OutcomeFit {
                mu: mu.into_iter().map(Some).collect(),
                flags,
            })
        }
        ModelSpec::Forest(config) => {
            let mut flags = Vec::new();
            let mut mu = Vec::with_capacity(nv);
            for k in 0..nv {
                let (rows, y): (Vec<usize>, Vec<f64>) =
                    obs.iter().filter(|o| o.1 == k).map(|&(i, _, y)| (i, y)).unzip();
                if rows.is_empty() {
                    mu.push(None);
                    continue;
                }
                let label = format!("outcome[{}]", arms.version(k));
                mu.push(Some(forest_regression(cohort, &rows, &y, config, k as u64, &label, &mut flags)?));
            }
            Ok(OutcomeFit { mu, flags })
        }
    }
}

/// The arm-level model: the outcome formula with the version factor
/// replaced by the arm indicator, or one forest per arm.
pub(crate) fn fit_arm_outcome(cohort: &CohortTable, spec: &ModelSpec) -> Result<ArmOutcomeFit> {
    let arms = cohort.arm_spec();
    let obs = observed(cohort);
    if obs.is_empty() {
        return Err(Error::EmptyCell("no unit with an observed version and outcome".into()));
    }
    match spec {
        ModelSpec::Glm { formula } => {
            let formula: Formula = formula.substitute(VERSION_FACTOR, ARM_FACTOR);
            let encoder = Encoder::new(&formula, cohort.schema(), arms)?;
            let train: Vec<_> = obs.iter().map(|&(i, k, y)| (i, None, Some(arms.arm_of(k)), y)).collect();
            let targets = [(None, Some(Arm::Control)), (None, Some(Arm::Treated))];
            let (mut mu, flags) = glm_predictions(cohort, &encoder, &train, &targets, "arm-outcome")?;
            let treated = mu.pop();
            let control = mu.pop();
            Ok(ArmOutcomeFit {
                mu: [control, treated],
                flags,
            })
        }
        ModelSpec::Forest(config) => {
            let mut flags = Vec::new();
            let mut mu = [None, None];
            for arm in [Arm::Control, Arm::Treated] {
                let (rows, y): (Vec<usize>, Vec<f64>) = obs
                    .iter()
                    .filter(|o| arms.arm_of(o.1) == arm)
                    .map(|&(i, _, y)| (i, y))
                    .unzip();
                if rows.is_empty() {
                    continue;
                }
                let label = format!("arm-outcome[{}]", arm.code());
                let offset = 1000 + arm.code() as u64;
                mu[arm.code() as usize] = Some(forest_regression(cohort, &rows, &y, config, offset, &label, &mut flags)?);
            }
            Ok(ArmOutcomeFit { mu, flags })
        }
    }
}

/// Class probabilities for `labels` restricted to the classes that occur;
/// returns `probs[i][class]` over `n_classes`.
fn classify(
    cohort: &CohortTable,
    rows: &[usize],
    labels: &[usize],
    n_classes: usize,
    spec: &ModelSpec,
    seed_offset: u64,
    label: &str,
    flags: &mut Vec<String>,
) -> Result<Vec<Vec<f64>>> {
    let units = cohort.units();
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() == 1 {
        let mut p = vec![0.0; n_classes];
        p[present[0]] = 1.0;
        return Ok(vec![p; units.len()]);
    }
    let remap: Vec<usize> = labels
        .iter()
        .map(|l| present.binary_search(l).expect("present label"))
        .collect();
    let m = present.len();
    let local: Vec<Vec<f64>> = match spec {
        ModelSpec::Glm { formula } => {
            let encoder = Encoder::new(formula, cohort.schema(), cohort.arm_spec())?;
            let x = encoder.design(rows.iter().map(|&i| (units[i].covariates.as_slice(), None, None)))?;
            let model = fit_multinomial(&x, &remap, m, 0)?;
            flags.extend(model.info.flags(label));
            let mut buf = Vec::with_capacity(encoder.width());
            units
                .iter()
                .map(|u| {
                    encoder.encode_into(&u.covariates, None, None, &mut buf);
                    model.predict_proba(&buf)
                })
                .collect::<Result<_>>()?
        }
        ModelSpec::Forest(config) => {
            let mut cfg = config.clone();
            cfg.seed = cfg.seed.wrapping_add(seed_offset);
            if rows.len() < 2 * cfg.min_leaf {
                cfg.min_leaf = (rows.len() / 2).max(1);
                flags.push(format!("{label}:min_leaf-reduced"));
            }
            if let Some(mt) = cfg.mtry {
                cfg.mtry = Some(mt.min(cohort.schema().len()));
            }
            let x: Vec<Vec<f64>> = rows.iter().map(|&i| units[i].covariates.clone()).collect();
            let model = fit_forest(
                &x,
                Response::Classification {
                    labels: &remap,
                    n_classes: m,
                },
                &cfg,
            )?;
            if model.constant_features {
                flags.push(format!("{label}:constant-features"));
            }
            units
                .iter()
                .map(|u| model.predict_proba(&u.covariates))
                .collect::<Result<_>>()?
        }
    };
    Ok(local
        .into_iter()
        .map(|p| {
            let mut full = vec![0.0; n_classes];
            for (j, &c) in present.iter().enumerate() {
                full[c] = p[j];
            }
            full
        })
        .collect())
}

pub(crate) fn fit_propensity(cohort: &CohortTable, spec: &ModelSpec, form: PropensityForm) -> Result<PropensityFit> {
    let arms = cohort.arm_spec();
    let nv = arms.n_versions();
    let (rows, versions): (Vec<usize>, Vec<usize>) = cohort
        .units()
        .iter()
        .enumerate()
        .filter_map(|(i, u)| Some((i, u.version?)))
        .unzip();
    if rows.is_empty() {
        return Err(Error::EmptyCell("no unit with an observed version".into()));
    }
    let mut flags = Vec::new();
    let f = match form {
        PropensityForm::Joint => classify(cohort, &rows, &versions, nv, spec, 2000, "propensity", &mut flags)?,
        PropensityForm::Factored => {
            let arm_labels: Vec<usize> = versions.iter().map(|&k| arms.arm_of(k).code() as usize).collect();
            let pa = classify(cohort, &rows, &arm_labels, 2, spec, 2000, "propensity[A]", &mut flags)?;
            let mut f = vec![vec![0.0; nv]; cohort.len()];
            for arm in [Arm::Control, Arm::Treated] {
                let range = arms.arm_range(arm);
                let (arm_rows, local): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .zip(&versions)
                    .filter(|(_, k)| range.contains(k))
                    .map(|(&i, &k)| (i, k - range.start))
                    .unzip();
                if arm_rows.is_empty() {
                    continue;
                }
                let label = format!("propensity[K|A={}]", arm.code());
                let offset = 2001 + arm.code() as u64;
                let pk = classify(cohort, &arm_rows, &local, range.len(), spec, offset, &label, &mut flags)?;
                for (i, row) in f.iter_mut().enumerate() {
                    for (j, k) in range.clone().enumerate() {
                        row[k] = pa[i][arm.code() as usize] * pk[i][j];
                    }
                }
            }
            f
        }
    };
    Ok(PropensityFit { f, flags })
}
