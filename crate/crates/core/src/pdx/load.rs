//! Reading screen exports: `models.csv` plus either precomputed responses or
//! raw volume series.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::metrics::{response_metrics, VolumeSeries};
use super::{DrugResponse, PdxConfig, PdxModelRecord, DRUGS, MUTATIONS};
use crate::error::{Error, Result};

pub enum ResponseSource<R> {
    /// `model_id, drug, best_average_response, responder[, best_response]`.
    Responses(R),
    /// `model_id, drug, day, volume_mm3`.
    Volumes(R),
}

#[derive(Deserialize)]
struct ResponseRow {
    model_id: String,
    drug: String,
    best_average_response: Option<f64>,
    responder: Option<String>,
    #[serde(default)]
    best_response: Option<f64>,
}

#[derive(Deserialize)]
struct VolumeRow {
    model_id: String,
    drug: String,
    day: u32,
    volume_mm3: f64,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn flag(raw: &str, what: &str) -> std::result::Result<u8, String> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("{what}: expected 0 or 1, got {other:?}")),
    }
}

fn read_models<R: Read>(r: R, problems: &mut Vec<String>) -> Result<BTreeMap<String, PdxModelRecord>> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    let col = |n: &str| header.iter().position(|h| h == n);
    let mut missing: Vec<String> = ["model_id", "tissue"]
        .into_iter()
        .chain(MUTATIONS)
        .filter(|n| col(n).is_none())
        .map(|n| format!("models: missing column {n}"))
        .collect();
    if !missing.is_empty() {
        problems.append(&mut missing);
        return Err(Error::Load(std::mem::take(problems)));
    }
    let (id_col, tissue_col) = (col("model_id").expect("checked"), col("tissue").expect("checked"));
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("models line {line}: {e}"));
                continue;
            }
        };
        let id = rec.get(id_col).unwrap_or("").to_string();
        let mut mutations = BTreeMap::new();
        for m in MUTATIONS {
            match flag(rec.get(col(m).expect("checked")).unwrap_or(""), m) {
                Ok(v) => {
                    mutations.insert(m.to_string(), v);
                }
                Err(e) => problems.push(format!("models line {line}: {e}")),
            }
        }
        if id.is_empty() {
            problems.push(format!("models line {line}: empty model_id"));
            continue;
        }
        if mutations.len() != MUTATIONS.len() {
            continue;
        }
        let record = PdxModelRecord {
            model_id: id.clone(),
            tissue: rec.get(tissue_col).unwrap_or("").to_string(),
            mutations,
            responses: BTreeMap::new(),
            flags: Vec::new(),
        };
        if out.insert(id.clone(), record).is_some() {
            problems.push(format!("models line {line}: duplicate model {id}"));
        }
    }
    Ok(out)
}

fn check_drug(drug: &str, line: usize, problems: &mut Vec<String>) -> bool {
    if DRUGS.contains(&drug) {
        true
    } else {
        problems.push(format!("line {line}: unknown drug {drug:?}"));
        false
    }
}

/// Loads one record per model. Metrics are computed from volume series when
/// those are given; missing drugs or follow-up are flagged on the record.
pub fn load_pdx<M: Read, R: Read>(models: M, source: ResponseSource<R>, config: &PdxConfig) -> Result<Vec<PdxModelRecord>> {
    config.thresholds.validate()?;
    let mut problems = Vec::new();
    let mut records = read_models(models, &mut problems)?;
    let mut seen = BTreeSet::new();
    match source {
        ResponseSource::Responses(r) => {
            for (i, row) in reader(r).deserialize::<ResponseRow>().enumerate() {
                let line = i + 2;
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        problems.push(format!("responses line {line}: {e}"));
                        continue;
                    }
                };
                if !check_drug(&row.drug, line, &mut problems) {
                    continue;
                }
                let responder = match row.responder.as_deref().map(str::trim) {
                    None | Some("") => None,
                    Some(raw) => match flag(raw, "responder") {
                        Ok(v) => Some(v == 1),
                        Err(e) => {
                            problems.push(format!("responses line {line}: {e}"));
                            continue;
                        }
                    },
                };
                if !seen.insert((row.model_id.clone(), row.drug.clone())) {
                    problems.push(format!("responses line {line}: duplicate ({}, {})", row.model_id, row.drug));
                    continue;
                }
                match records.get_mut(&row.model_id) {
                    Some(rec) => {
                        rec.responses.insert(
                            row.drug,
                            DrugResponse {
                                best_response: row.best_response,
                                best_average_response: row.best_average_response,
                                responder,
                            },
                        );
                    }
                    None => problems.push(format!("responses line {line}: unknown model {}", row.model_id)),
                }
            }
        }
        ResponseSource::Volumes(r) => {
            let mut series: BTreeMap<(String, String), Vec<(u32, f64)>> = BTreeMap::new();
            for (i, row) in reader(r).deserialize::<VolumeRow>().enumerate() {
                let line = i + 2;
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        problems.push(format!("volumes line {line}: {e}"));
                        continue;
                    }
                };
                if !check_drug(&row.drug, line, &mut problems) {
                    continue;
                }
                if !records.contains_key(&row.model_id) {
                    problems.push(format!("volumes line {line}: unknown model {}", row.model_id));
                    continue;
                }
                series
                    .entry((row.model_id, row.drug))
                    .or_default()
                    .push((row.day, row.volume_mm3));
            }
            for ((model_id, drug), mut points) in series {
                points.sort_by_key(|p| p.0);
                if points.windows(2).any(|w| w[0].0 == w[1].0) {
                    problems.push(format!("volumes: duplicate day for ({model_id}, {drug})"));
                    continue;
                }
                let s = VolumeSeries {
                    model_id: model_id.clone(),
                    drug: drug.clone(),
                    points,
                };
                let rec = records.get_mut(&model_id).expect("checked");
                match response_metrics(&s, config.denominator) {
                    Ok(m) => {
                        rec.responses.insert(
                            drug,
                            DrugResponse {
                                best_response: Some(m.best_response),
                                best_average_response: Some(m.best_average_response),
                                responder: Some(config.thresholds.classify(&m).responder()),
                            },
                        );
                    }
                    Err(Error::InsufficientFollowUp) => rec.flags.push(format!("insufficient follow-up: {drug}")),
                    Err(e) => problems.push(e.to_string()),
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    let mut out: Vec<PdxModelRecord> = records.into_values().collect();
    for rec in &mut out {
        for d in DRUGS {
            if !rec.responses.contains_key(d) {
                rec.flags.push(format!("incomplete: no response to {d}"));
            }
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// [`load_pdx`] on files; `volumes` is used only when `responses` is absent.
pub fn load_pdx_files(
    models: &Path,
    responses: Option<&Path>,
    volumes: Option<&Path>,
    config: &PdxConfig,
) -> Result<Vec<PdxModelRecord>> {
    let source = match (responses, volumes) {
        (Some(p), _) => ResponseSource::Responses(open(p)?),
        (None, Some(p)) => ResponseSource::Volumes(open(p)?),
        (None, None) => return Err(Error::validation("pdx", "either responses or volumes is required")),
    };
    load_pdx(open(models)?, source, config)
}
