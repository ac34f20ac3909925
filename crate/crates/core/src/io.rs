//! Cohort CSV reading and writing.
//!
//! Header: `unit_id, <covariates...>, arm, version, outcome[, cf__<version>...]`.
//! An empty field is a missing value. Categorical covariates may be given by
//! level name or level index.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Arm, ArmSpec, CohortTable, CovariateKind, OutcomeKind, Schema, UnitRecord};

pub const COUNTERFACTUAL_PREFIX: &str = "cf__";

struct Columns {
    unit_id: usize,
    covariates: Vec<usize>,
    arm: Option<usize>,
    version: Option<usize>,
    outcome: Option<usize>,
    /// (column, version index)
    counterfactuals: Vec<(usize, usize)>,
}

fn locate(header: &csv::StringRecord, schema: &Schema, arms: &ArmSpec) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut problems = Vec::new();
    let unit_id = find("unit_id");
    if unit_id.is_none() {
        problems.push("missing column unit_id".to_string());
    }
    let mut covariates = Vec::with_capacity(schema.len());
    for c in &schema.covariates {
        match find(&c.name) {
            Some(i) => covariates.push(i),
            None => problems.push(format!("missing covariate column {}", c.name)),
        }
    }
    let mut counterfactuals = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(v) = h.trim().strip_prefix(COUNTERFACTUAL_PREFIX) {
            match arms.index_of_str(v) {
                Some(k) => counterfactuals.push((i, k)),
                None => problems.push(format!("counterfactual column {h} names an unknown version")),
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    Ok(Columns {
        unit_id: unit_id.expect("checked"),
        covariates,
        arm: find("arm"),
        version: find("version"),
        outcome: find("outcome"),
        counterfactuals,
    })
}

fn number(field: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("{what}: cannot parse {f:?} as a number"))
}

/// Reads a cohort, collecting every row error before failing.
pub fn read_cohort_csv<R: Read>(
    reader: R,
    schema: Arc<Schema>,
    arms: Arc<ArmSpec>,
    outcome_kind: OutcomeKind,
) -> Result<CohortTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = locate(&header, &schema, &arms)?;
    let nv = arms.n_versions();
    let mut units = Vec::new();
    let mut problems = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let get = |i: usize| rec.get(i).unwrap_or("");
        let mut errs = Vec::new();
        let unit_id = get(cols.unit_id).to_string();
        if unit_id.is_empty() {
            errs.push("empty unit_id".to_string());
        }
        let mut covs = Vec::with_capacity(schema.len());
        for (def, &c) in schema.covariates.iter().zip(&cols.covariates) {
            let raw = get(c);
            let v = match &def.kind {
                CovariateKind::Categorical { levels } => match levels.iter().position(|l| l == raw) {
                    Some(j) => Ok(Some(j as f64)),
                    None => number(raw, &def.name),
                },
                _ => number(raw, &def.name),
            };
            match v {
                Ok(Some(x)) => covs.push(x),
                Ok(None) => errs.push(format!("{}: missing covariate value", def.name)),
                Err(e) => errs.push(e),
            }
        }
        let arm = match cols.arm.map(get).map(str::trim) {
            None | Some("") => None,
            Some("0") => Some(Arm::Control),
            Some("1") => Some(Arm::Treated),
            Some(other) => {
                errs.push(format!("arm: expected 0, 1 or empty, got {other:?}"));
                None
            }
        };
        let version = match cols.version.map(get).map(str::trim) {
            None | Some("") => None,
            Some(v) => match arms.index_of_str(v) {
                Some(k) => Some(k),
                None => {
                    errs.push(format!("version: unknown version {v:?}"));
                    None
                }
            },
        };
        let outcome = match cols.outcome.map(|c| number(get(c), "outcome")) {
            None => None,
            Some(Ok(v)) => v,
            Some(Err(e)) => {
                errs.push(e);
                None
            }
        };
        let counterfactuals = if cols.counterfactuals.is_empty() {
            None
        } else {
            let mut cf = vec![None; nv];
            for &(c, k) in &cols.counterfactuals {
                match number(get(c), &header[c]) {
                    Ok(v) => cf[k] = v,
                    Err(e) => errs.push(e),
                }
            }
            Some(cf)
        };
        if errs.is_empty() {
            units.push(UnitRecord {
                unit_id,
                covariates: covs,
                arm,
                version,
                outcome,
                counterfactuals,
            });
        } else {
            problems.extend(errs.into_iter().map(|e| format!("line {line}: {e}")));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    CohortTable::new(schema, arms, outcome_kind, units)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_cohort_csv<W: Write>(writer: W, cohort: &CohortTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = cohort.schema();
    let arms = cohort.arm_spec();
    let with_cf = cohort.units().iter().any(|u| u.counterfactuals.is_some());
    let mut header: Vec<String> = vec!["unit_id".into()];
    header.extend(schema.covariates.iter().map(|c| c.name.clone()));
    header.extend(["arm", "version", "outcome"].map(String::from));
    if with_cf {
        header.extend(arms.versions().map(|v| format!("{COUNTERFACTUAL_PREFIX}{v}")));
    }
    w.write_record(&header)?;
    for u in cohort.units() {
        let mut rec: Vec<String> = vec![u.unit_id.clone()];
        for (def, v) in schema.covariates.iter().zip(&u.covariates) {
            rec.push(match &def.kind {
                CovariateKind::Categorical { levels } => levels[*v as usize].clone(),
                _ => v.to_string(),
            });
        }
        rec.push(u.arm.map(|a| a.code().to_string()).unwrap_or_default());
        rec.push(u.version.map(|k| arms.version(k).to_string()).unwrap_or_default());
        rec.push(fmt_opt(u.outcome));
        if with_cf {
            let cf = u.counterfactuals.as_deref();
            for k in 0..arms.n_versions() {
                rec.push(fmt_opt(cf.and_then(|c| c[k])));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovariateDef;

    fn study() -> (Arc<Schema>, Arc<ArmSpec>) {
        (
            Arc::new(
                Schema::new(vec![
                    CovariateDef::binary("C1"),
                    CovariateDef {
                        name: "site".into(),
                        role: Default::default(),
                        kind: CovariateKind::Categorical {
                            levels: vec!["a".into(), "b".into()],
                        },
                    },
                ])
                .unwrap(),
            ),
            Arc::new(ArmSpec::new(vec!["k0".into()], vec!["k1".into()]).unwrap()),
        )
    }

    #[test]
    fn roundtrip_with_missing_values() {
        let text = "unit_id,C1,site,arm,version,outcome,cf__k0,cf__k1\n\
                    u1,1,b,1,k1,2.5,,2.5\n\
                    u2,0,a,,,,1,\n";
        let (s, a) = study();
        let c = read_cohort_csv(text.as_bytes(), s.clone(), a.clone(), OutcomeKind::Continuous).unwrap();
        assert_eq!(c.units()[0].covariates, vec![1.0, 1.0]);
        assert_eq!(c.units()[0].arm, Some(Arm::Treated));
        assert_eq!(c.units()[1].version, None);
        assert_eq!(c.units()[1].counterfactuals, Some(vec![Some(1.0), None]));
        let mut out = Vec::new();
        write_cohort_csv(&mut out, &c).unwrap();
        let back = read_cohort_csv(out.as_slice(), s, a, OutcomeKind::Continuous).unwrap();
        assert_eq!(back.units(), c.units());
    }

    #[test]
    fn collects_all_row_errors() {
        let text = "unit_id,C1,site,arm,version,outcome\nu1,x,a,1,k1,1\nu2,0,a,2,k1,1\nu3,0,a,1,k7,1\n";
        let (s, a) = study();
        match read_cohort_csv(text.as_bytes(), s, a, OutcomeKind::Continuous) {
            Err(Error::Load(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_covariate_column() {
        let (s, a) = study();
        let err = read_cohort_csv("unit_id,C1\n".as_bytes(), s, a, OutcomeKind::Continuous).unwrap_err();
        assert!(err.to_string().contains("site"));
    }
}
