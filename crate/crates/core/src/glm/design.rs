//! Design matrices and the model-formula mini-language.
//!
//! A formula is a list of terms. A term is a variable name (a covariate,
//! `"K"` for the version factor or `"A"` for the arm indicator) or a list of
//! names forming an interaction. The keyword `"saturated"` expands the other
//! listed main effects into their full factorial.
//!
//! ```json
//! ["C1", "C2", "K", ["C1", "K"], ["C2", "K"]]
//! ["saturated", "C1", "C2", "K"]
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Arm, ArmSpec, CovariateKind, Schema};

pub const VERSION_FACTOR: &str = "K";
pub const ARM_FACTOR: &str = "A";
pub const SATURATED: &str = "saturated";

/// `n × p` regressors; column 0 is the all-ones intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(Error::Schema(format!(
                "design has {} columns but {} names",
                x.ncols(),
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("design matrix has non-finite entries".into()));
        }
        Ok(DesignMatrix { x, names })
    }

    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>) -> Result<Self> {
        let p = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Schema(format!("row {bad} has width {} (expected {p})", rows[bad].len())));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, names)
    }

    /// Prepends an intercept to the given columns.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(Error::Schema("columns differ in length".into()));
        }
        let mut names = vec!["(Intercept)".to_string()];
        names.extend(columns.iter().map(|c| c.0.to_string()));
        let x = DMatrix::from_fn(n, columns.len() + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1].1[i] });
        Self::new(x, names)
    }

    pub fn intercept_only(n: usize) -> Self {
        DesignMatrix {
            x: DMatrix::from_element(n, 1, 1.0),
            names: vec!["(Intercept)".into()],
        }
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Main(String),
    Interaction(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn new(terms: Vec<Term>) -> Self {
        Formula { terms }
    }

    /// Builds a formula from main effects only.
    pub fn main_effects(names: &[&str]) -> Self {
        Formula {
            terms: names.iter().map(|n| Term::Main(n.to_string())).collect(),
        }
    }

    pub fn saturated(names: &[&str]) -> Self {
        let mut terms = vec![Term::Main(SATURATED.into())];
        terms.extend(names.iter().map(|n| Term::Main(n.to_string())));
        Formula { terms }
    }

    pub fn intercept_only() -> Self {
        Formula { terms: vec![] }
    }

    /// Terms as lists of variable names, duplicates removed, saturated keyword
    /// expanded.
    pub fn expand(&self) -> Vec<Vec<String>> {
        let saturated = self.terms.iter().any(|t| matches!(t, Term::Main(n) if n == SATURATED));
        let mut out: Vec<Vec<String>> = Vec::new();
        let mut push = |t: Vec<String>| {
            let mut key = t.clone();
            key.sort();
            if !out.iter().any(|o| {
                let mut k = o.clone();
                k.sort();
                k == key
            }) {
                out.push(t);
            }
        };
        if saturated {
            let mains: Vec<String> = self
                .terms
                .iter()
                .filter_map(|t| match t {
                    Term::Main(n) if n != SATURATED => Some(n.clone()),
                    _ => None,
                })
                .collect();
            let m = mains.len();
            let mut subsets: Vec<Vec<usize>> = (1u32..(1 << m))
                .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
                .collect();
            subsets.sort_by_key(|s| s.len());
            for s in subsets {
                push(s.into_iter().map(|i| mains[i].clone()).collect());
            }
            for t in &self.terms {
                if let Term::Interaction(v) = t {
                    push(v.clone());
                }
            }
        } else {
            for t in &self.terms {
                match t {
                    Term::Main(n) => push(vec![n.clone()]),
                    Term::Interaction(v) => push(v.clone()),
                }
            }
        }
        out
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.terms.iter().any(|t| match t {
            Term::Main(n) => n == var,
            Term::Interaction(v) => v.iter().any(|n| n == var),
        })
    }

    /// Same formula with every occurrence of `from` renamed to `to`.
    pub fn substitute(&self, from: &str, to: &str) -> Formula {
        let rename = |n: &String| if n == from { to.to_string() } else { n.clone() };
        Formula {
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Main(n) => Term::Main(rename(n)),
                    Term::Interaction(v) => Term::Interaction(v.iter().map(rename).collect()),
                })
                .collect(),
        }
    }

    /// Same formula without any term involving `var`.
    pub fn without(&self, var: &str) -> Formula {
        Formula {
            terms: self
                .terms
                .iter()
                .filter_map(|t| match t {
                    Term::Main(n) if n == var => None,
                    Term::Interaction(v) => {
                        let kept: Vec<String> = v.iter().filter(|n| *n != var).cloned().collect();
                        match kept.len() {
                            0 => None,
                            1 => Some(Term::Main(kept[0].clone())),
                            _ => Some(Term::Interaction(kept)),
                        }
                    }
                    other => Some(other.clone()),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
enum Variable {
    Numeric(usize),
    Categorical { index: usize, levels: usize },
    Version { levels: usize },
    Arm,
}

impl Variable {
    fn width(&self) -> usize {
        match self {
            Variable::Numeric(_) | Variable::Arm => 1,
            Variable::Categorical { levels, .. } | Variable::Version { levels } => levels - 1,
        }
    }

    /// Value of dummy column `j` (or the numeric value).
    fn column(&self, j: usize, covs: &[f64], version: Option<usize>, arm: Option<Arm>) -> f64 {
        match self {
            Variable::Numeric(i) => covs[*i],
            Variable::Categorical { index, .. } => f64::from(covs[*index] as usize == j + 1),
            Variable::Version { .. } => f64::from(version == Some(j + 1)),
            Variable::Arm => f64::from(arm == Some(Arm::Treated)),
        }
    }
}

/// Compiled formula: maps a unit's covariates plus a (version, arm) setting
/// to a design row. The version factor's reference level is the first
/// declared version; categorical references are their first level.
#[derive(Clone, Debug)]
pub struct Encoder {
    terms: Vec<Vec<Variable>>,
    names: Vec<String>,
    uses_version: bool,
    uses_arm: bool,
}

impl Encoder {
    pub fn new(formula: &Formula, schema: &Schema, arms: &ArmSpec) -> Result<Self> {
        let mut terms = Vec::new();
        let mut names = vec!["(Intercept)".to_string()];
        let mut uses_version = false;
        let mut uses_arm = false;
        for term in formula.expand() {
            let mut vars = Vec::with_capacity(term.len());
            let mut labels: Vec<Vec<String>> = Vec::with_capacity(term.len());
            for name in &term {
                let (var, lab) = match name.as_str() {
                    VERSION_FACTOR => {
                        uses_version = true;
                        let levels = arms.n_versions();
                        (
                            Variable::Version { levels },
                            (1..levels).map(|k| format!("K[{}]", arms.version(k))).collect(),
                        )
                    }
                    ARM_FACTOR => {
                        uses_arm = true;
                        (Variable::Arm, vec!["A".to_string()])
                    }
                    SATURATED => {
                        return Err(Error::validation("formula", "'saturated' cannot appear inside an interaction"))
                    }
                    cov => {
                        let i = schema
                            .index_of(cov)
                            .ok_or_else(|| Error::validation("formula", format!("unknown variable {cov}")))?;
                        match &schema.get(i).kind {
                            CovariateKind::Categorical { levels } => (
                                Variable::Categorical {
                                    index: i,
                                    levels: levels.len(),
                                },
                                levels[1..].iter().map(|l| format!("{cov}[{l}]")).collect(),
                            ),
                            _ => (Variable::Numeric(i), vec![cov.to_string()]),
                        }
                    }
                };
                vars.push(var);
                labels.push(lab);
            }
            for combo in cartesian(&labels.iter().map(Vec::len).collect::<Vec<_>>()) {
                names.push(
                    combo
                        .iter()
                        .enumerate()
                        .map(|(v, &j)| labels[v][j].clone())
                        .collect::<Vec<_>>()
                        .join(":"),
                );
            }
            terms.push(vars);
        }
        Ok(Encoder {
            terms,
            names,
            uses_version,
            uses_arm,
        })
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn uses_version(&self) -> bool {
        self.uses_version
    }

    pub fn uses_arm(&self) -> bool {
        self.uses_arm
    }

    pub fn encode_into(&self, covs: &[f64], version: Option<usize>, arm: Option<Arm>, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        for vars in &self.terms {
            let widths: Vec<usize> = vars.iter().map(Variable::width).collect();
            for combo in cartesian(&widths) {
                let v: f64 = vars
                    .iter()
                    .zip(&combo)
                    .map(|(var, &j)| var.column(j, covs, version, arm))
                    .product();
                out.push(v);
            }
        }
    }

    pub fn encode(&self, covs: &[f64], version: Option<usize>, arm: Option<Arm>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(covs, version, arm, &mut out);
        out
    }

    pub fn design<'a>(
        &self,
        rows: impl Iterator<Item = (&'a [f64], Option<usize>, Option<Arm>)>,
    ) -> Result<DesignMatrix> {
        let mut data = Vec::new();
        let mut n = 0;
        let mut buf = Vec::with_capacity(self.width());
        for (covs, version, arm) in rows {
            self.encode_into(covs, version, arm, &mut buf);
            data.extend_from_slice(&buf);
            n += 1;
        }
        let x = DMatrix::from_row_slice(n, self.width(), &data);
        DesignMatrix::new(x, self.names.clone())
    }
}

fn cartesian(widths: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &w in widths {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..w).map(move |j| {
                    let mut p = prefix.clone();
                    p.push(j);
                    p
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovariateDef;

    fn setup() -> (Schema, ArmSpec) {
        (
            Schema::new(vec![CovariateDef::binary("C1"), CovariateDef::binary("C2")]).unwrap(),
            ArmSpec::new(vec!["k0".into()], vec!["k1_1".into(), "k1_2".into()]).unwrap(),
        )
    }

    #[test]
    fn formula_json_roundtrip() {
        let f: Formula = serde_json::from_str(r#"["C1","C2","K",["C1","K"],["C2","K"]]"#).unwrap();
        assert_eq!(f.expand().len(), 5);
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"["C1","C2","K",["C1","K"],["C2","K"]]"#);
    }

    #[test]
    fn saturated_expands_all_interactions() {
        let f = Formula::saturated(&["C1", "C2", "K"]);
        let e = f.expand();
        assert_eq!(e.len(), 7);
        assert_eq!(e.last().unwrap().len(), 3);
        let (schema, arms) = setup();
        let enc = Encoder::new(&f, &schema, &arms).unwrap();
        // 1 + 1 + 1 + 2 + 1 + 2 + 2 + 2 = 12 = 4 strata × 3 versions
        assert_eq!(enc.width(), 12);
    }

    #[test]
    fn encodes_version_interactions() {
        let (schema, arms) = setup();
        let f: Formula = serde_json::from_str(r#"["C1","K",["C1","K"]]"#).unwrap();
        let enc = Encoder::new(&f, &schema, &arms).unwrap();
        assert_eq!(
            enc.names(),
            ["(Intercept)", "C1", "K[k1_1]", "K[k1_2]", "C1:K[k1_1]", "C1:K[k1_2]"]
        );
        assert_eq!(enc.encode(&[1.0, 0.0], Some(2), None), vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(enc.encode(&[1.0, 0.0], Some(0), None), vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn substitute_and_without() {
        let f: Formula = serde_json::from_str(r#"["C1","K",["C1","K"]]"#).unwrap();
        assert_eq!(serde_json::to_string(&f.substitute("K", "A")).unwrap(), r#"["C1","A",["C1","A"]]"#);
        assert_eq!(serde_json::to_string(&f.without("K")).unwrap(), r#"["C1","C1"]"#);
        assert_eq!(f.without("K").expand().len(), 1);
    }

    #[test]
    fn unknown_variable_rejected() {
        let (schema, arms) = setup();
        assert!(Encoder::new(&Formula::main_effects(&["C9"]), &schema, &arms).is_err());
    }

    #[test]
    fn design_rejects_non_finite() {
        assert!(DesignMatrix::from_rows(&[vec![1.0, f64::NAN]], vec!["a".into(), "b".into()]).is_err());
    }
}
