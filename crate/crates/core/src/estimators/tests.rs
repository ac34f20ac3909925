use std::sync::Arc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::glm::Formula;
use crate::model::{ArmSpec, CovariateDef, OutcomeKind, PmAlgorithm, Schema, UnitRecord};

fn glm(formula: Formula) -> Option<ModelSpec> {
    Some(ModelSpec::Glm { formula })
}

/// (C=0,k1,2), (C=0,k0,0), (C=1,k1,4), (C=1,k0,2).
fn four_units() -> (CohortTable, BoundAlgorithm) {
    let schema = Arc::new(Schema::new(vec![CovariateDef::binary("C")]).unwrap());
    let arms = Arc::new(ArmSpec::new(vec!["k0".into()], vec!["k1".into()]).unwrap());
    let rows = [(0.0, 1, 2.0), (0.0, 0, 0.0), (1.0, 1, 4.0), (1.0, 0, 2.0)];
    let units = rows
        .iter()
        .enumerate()
        .map(|(i, &(c, k, y))| UnitRecord {
            unit_id: format!("u{i}"),
            covariates: vec![c],
            arm: None,
            version: Some(k),
            outcome: Some(y),
            counterfactuals: None,
        })
        .collect();
    let cohort = CohortTable::new(schema.clone(), arms.clone(), OutcomeKind::Continuous, units).unwrap();
    let alg = PmAlgorithm::new(vec![]).rule(&[], "k1").bind(&schema, &arms).unwrap();
    (cohort, alg)
}

fn saturated_config(outcome: &[&str], treatment: &[&str], stratify: &[&str]) -> EstimationConfig {
    EstimationConfig {
        outcome_model: glm(Formula::saturated(outcome)),
        treatment_model: glm(Formula::saturated(treatment)),
        positivity: PositivityOptions {
            stratifier: Some(Stratifier::new(stratify)),
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn four_unit_standardization() {
    let (c, alg) = four_units();
    let cfg = saturated_config(&["K", "C"], &["C"], &["C"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    assert_abs_diff_eq!(est.std_mean(&Regime::Version(1)).unwrap().value, 3.0, epsilon = 1e-10);
    assert_abs_diff_eq!(est.std_mean(&Regime::Version(0)).unwrap().value, 1.0, epsilon = 1e-10);
    let ce1 = est.estimate_effect(Estimand::Ce1, Method::Std).unwrap();
    assert_abs_diff_eq!(ce1.effect, 2.0, epsilon = 1e-10);
    // Dirac at r ≡ k1 reduces to the single version.
    assert_abs_diff_eq!(est.std_mean(&est.pm_regime().unwrap()).unwrap().value, 3.0, epsilon = 1e-10);
}

#[test]
fn four_unit_ipw_tmle_naive() {
    let (c, alg) = four_units();
    let cfg = saturated_config(&["K", "C"], &["C"], &["C"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    let ipw = est.ipw_mean(&Regime::Version(1)).unwrap();
    assert_abs_diff_eq!(ipw.value, 3.0, epsilon = 1e-10);
    // Propensities are 0.5 everywhere.
    assert_abs_diff_eq!(ipw.diagnostics.weight_max.unwrap(), 2.0, epsilon = 1e-8);
    let tmle = est.tmle_mean(&Regime::Version(1)).unwrap();
    assert!(tmle.diagnostics.epsilon.unwrap().abs() <= 1e-6);
    assert_abs_diff_eq!(tmle.value, 3.0, epsilon = 1e-6);
    assert_abs_diff_eq!(est.naive_mean(&Regime::Version(1)).unwrap().value, 3.0, epsilon = 1e-12);
}

#[test]
fn stabilized_weights_keep_point_estimate() {
    let (c, alg) = four_units();
    let plain = saturated_config(&["K", "C"], &["C"], &["C"]);
    let mut stab = plain.clone();
    stab.ipw.stabilized = true;
    let a = Estimator::new(&c, &alg, &plain).unwrap().ipw_mean(&Regime::Version(1)).unwrap();
    let b = Estimator::new(&c, &alg, &stab).unwrap().ipw_mean(&Regime::Version(1)).unwrap();
    assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-10);
    assert!(a.diagnostics.weight_max != b.diagnostics.weight_max);
}

#[test]
fn empty_cell_is_an_error() {
    let (c, alg) = four_units();
    let cfg = saturated_config(&["K", "C"], &["C"], &["C"]);
    let sub = c.subset(&[0, 2]);
    let est = Estimator::new(&sub, &alg, &cfg).unwrap();
    for m in [Method::Naive, Method::Std, Method::Ipw, Method::Tmle] {
        assert!(matches!(est.mean(m, &Regime::Version(0)), Err(Error::EmptyCell(_))), "{m}");
    }
}

#[test]
fn positivity_policy() {
    // C=1 units all received k1: the k0 cell of stratum C=1 is empty.
    let (c, alg) = four_units();
    let sub = c.subset(&[0, 1, 2]);
    let cfg = saturated_config(&["K", "C"], &["C"], &["C"]);
    let est = Estimator::new(&sub, &alg, &cfg).unwrap();
    assert!(matches!(est.std_mean(&Regime::Version(0)), Err(Error::Positivity(_))));
    let mut flag = cfg.clone();
    flag.positivity.policy = PositivityPolicy::Flag;
    flag.outcome_model = glm(Formula::main_effects(&["K", "C"]));
    let est = Estimator::new(&sub, &alg, &flag).unwrap();
    let m = est.std_mean(&Regime::Version(0)).unwrap();
    assert!(m.diagnostics.flags.iter().any(|f| f.starts_with("positivity-empty:")));
}

/// Two binary covariates, three versions, every stratum eligible, uneven
/// cell sizes and arbitrary outcomes with full counterfactuals.
fn discrete_fixture(treated: &[&str]) -> (CohortTable, BoundAlgorithm) {
    let schema = Arc::new(Schema::new(vec![CovariateDef::binary("C1"), CovariateDef::binary("C2")]).unwrap());
    let treated_ids: Vec<_> = treated.iter().map(|t| (*t).into()).collect();
    let arms = Arc::new(ArmSpec::new(vec!["k0".into()], treated_ids).unwrap());
    let nv = arms.n_versions();
    let mut units = Vec::new();
    let mut id = 0;
    for s in 0..4usize {
        let (c1, c2) = ((s & 1) as f64, (s >> 1) as f64);
        for k in 0..nv {
            let n = 2 + (3 * s + 5 * k) % 4;
            for j in 0..n {
                let cf: Vec<Option<f64>> = (0..nv)
                    .map(|v| Some(10.0 * v as f64 - 7.0 * c1 + 3.0 * c2 * v as f64 + ((j * 7 + v) % 5) as f64))
                    .collect();
                units.push(UnitRecord {
                    unit_id: format!("u{id}"),
                    covariates: vec![c1, c2],
                    arm: None,
                    version: Some(k),
                    outcome: cf[k],
                    counterfactuals: Some(cf),
                });
                id += 1;
            }
        }
    }
    let cohort = CohortTable::new(schema.clone(), arms.clone(), OutcomeKind::Continuous, units).unwrap();
    let last = treated[treated.len() - 1];
    let alg = PmAlgorithm::new(vec![])
        .rule(&[("C1", 1.0)], treated[0])
        .rule(&[("C2", 1.0)], last)
        .rule(&[], treated[0])
        .bind(&schema, &arms)
        .unwrap();
    (cohort, alg)
}

/// Nonparametric stratified estimator written out cell by cell.
fn stratified(cohort: &CohortTable, mass: impl Fn(&[f64], usize) -> f64) -> f64 {
    let nv = cohort.arm_spec().n_versions();
    let mut total = 0.0;
    let n = cohort.len() as f64;
    for s in 0..4usize {
        let key = [(s & 1) as f64, (s >> 1) as f64];
        let members: Vec<_> = cohort.units().iter().filter(|u| u.covariates == key).collect();
        let ps = members.len() as f64 / n;
        for k in 0..nv {
            let ys: Vec<f64> = members.iter().filter(|u| u.version == Some(k)).filter_map(|u| u.outcome).collect();
            let m = mass(&key, k);
            if m > 0.0 {
                total += ps * m * ys.iter().sum::<f64>() / ys.len() as f64;
            }
        }
    }
    total
}

#[test]
fn saturated_equivalences() {
    let (c, alg) = discrete_fixture(&["k1", "k2"]);
    let cfg = saturated_config(&["K", "C1", "C2"], &["C1", "C2"], &["C1", "C2"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    let rule = |key: &[f64]| alg.recommend(key).unwrap();

    let cases: Vec<(Regime, f64)> = vec![
        (Regime::Version(0), stratified(&c, |_, k| f64::from(k == 0))),
        (Regime::Version(2), stratified(&c, |_, k| f64::from(k == 2))),
        (est.pm_regime().unwrap(), stratified(&c, |key, k| f64::from(k == rule(key)))),
        (
            est.regime(&VersionDistribution::Uniform, Arm::Treated).unwrap(),
            stratified(&c, |_, k| if k > 0 { 0.5 } else { 0.0 }),
        ),
    ];
    for (regime, truth) in &cases {
        let std = est.std_mean(regime).unwrap().value;
        let ipw = est.ipw_mean(regime).unwrap().value;
        let tmle = est.tmle_mean(regime).unwrap();
        assert_abs_diff_eq!(std, truth, epsilon = 1e-8);
        assert_abs_diff_eq!(ipw, truth, epsilon = 1e-8);
        assert!(tmle.diagnostics.epsilon.unwrap().abs() <= 1e-6);
        assert_abs_diff_eq!(tmle.value, truth, epsilon = 1e-6);
    }

    // Physician-overall: saturated arm model against arm-level strata.
    let mut overall = 0.0;
    for s in 0..4usize {
        let key = [(s & 1) as f64, (s >> 1) as f64];
        let members: Vec<_> = c.units().iter().filter(|u| u.covariates == key).collect();
        let treated: Vec<f64> = members.iter().filter(|u| u.version != Some(0)).filter_map(|u| u.outcome).collect();
        overall += members.len() as f64 / c.len() as f64 * treated.iter().sum::<f64>() / treated.len() as f64;
    }
    let r = Regime::Overall(Arm::Treated);
    assert_abs_diff_eq!(est.std_mean(&r).unwrap().value, overall, epsilon = 1e-8);
    assert_abs_diff_eq!(est.ipw_mean(&r).unwrap().value, overall, epsilon = 1e-8);
    assert_abs_diff_eq!(est.tmle_mean(&r).unwrap().value, overall, epsilon = 1e-6);
}

#[test]
fn reductions_are_exact() {
    let (c, alg) = discrete_fixture(&["k1", "k2"]);
    let cfg = saturated_config(&["K", "C1", "C2"], &["C1", "C2"], &["C1", "C2"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    let k1 = c.arm_spec().version(1).clone();
    let dirac = est.regime(&VersionDistribution::constant(&k1), Arm::Treated).unwrap();
    for m in [Method::True, Method::Naive, Method::Std, Method::Ipw, Method::Tmle] {
        let a = est.mean(m, &dirac).unwrap().value;
        let b = est.mean(m, &Regime::Version(1)).unwrap().value;
        assert_eq!(a, b, "{m}");
    }
}

#[test]
fn singleton_treated_arm_has_zero_ce3() {
    let (c, alg) = discrete_fixture(&["k1"]);
    let cfg = saturated_config(&["K", "C1", "C2"], &["C1", "C2"], &["C1", "C2"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    for m in Method::ALL {
        let e = est.estimate_effect(Estimand::Ce3, m).unwrap();
        assert!(e.effect.abs() <= 1e-8, "{m}: {}", e.effect);
    }
}

#[test]
fn oracle_ce2_zero_when_physician_follows_rule() {
    let (c, alg) = discrete_fixture(&["k1", "k2"]);
    // Keep controls and treated units whose version is r(C).
    let keep: Vec<usize> = c
        .units()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.version == Some(0) || u.version == alg.recommend(&u.covariates))
        .map(|(i, _)| i)
        .collect();
    let sub = c.subset(&keep);
    let cfg = EstimationConfig {
        positivity: PositivityOptions {
            stratifier: Some(Stratifier::new(&["C1", "C2"])),
            ..Default::default()
        },
        ..Default::default()
    };
    let est = Estimator::new(&sub, &alg, &cfg).unwrap();
    let e = est.estimate_effect(Estimand::Ce2, Method::True).unwrap();
    assert_eq!(e.effect, 0.0);
}

#[test]
fn oracle_needs_counterfactuals() {
    let (c, alg) = four_units();
    let cfg = EstimationConfig::default();
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    assert!(matches!(
        est.oracle_mean(&Regime::Version(1)),
        Err(Error::MissingCounterfactual(v)) if v == vec!["k1".to_string()]
    ));
}

#[test]
fn report_records_failures() {
    let (c, alg) = four_units();
    let cfg = saturated_config(&["K", "C"], &["C"], &["C"]);
    let est = Estimator::new(&c, &alg, &cfg).unwrap();
    let r = est.report(&Estimand::ALL, &Method::ALL);
    let ce1 = &r.estimates[&Estimand::Ce1];
    assert!(ce1[&Method::True].error.is_some());
    assert_abs_diff_eq!(ce1[&Method::Std].effect.unwrap(), 2.0, epsilon = 1e-10);
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["estimates"]["CE1"]["std"]["effect"].is_number());
}

fn binary_cohort(ys: &[(f64, usize, f64)]) -> (CohortTable, BoundAlgorithm) {
    let schema = Arc::new(Schema::new(vec![CovariateDef::binary("C")]).unwrap());
    let arms = Arc::new(ArmSpec::new(vec!["k0".into()], vec!["k1".into(), "k2".into()]).unwrap());
    let units = ys
        .iter()
        .enumerate()
        .map(|(i, &(c, k, y))| UnitRecord {
            unit_id: format!("u{i}"),
            covariates: vec![c],
            arm: None,
            version: Some(k),
            outcome: Some(y),
            counterfactuals: None,
        })
        .collect();
    let cohort = CohortTable::new(schema.clone(), arms.clone(), OutcomeKind::Binary, units).unwrap();
    let alg = PmAlgorithm::new(vec![])
        .rule(&[("C", 1.0)], "k1")
        .rule(&[], "k2")
        .bind(&schema, &arms)
        .unwrap();
    (cohort, alg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binary_means_stay_in_unit_interval(bits in proptest::collection::vec(any::<bool>(), 36)) {
        let rows: Vec<(f64, usize, f64)> = bits
            .iter()
            .enumerate()
            .map(|(i, b)| ((i % 2) as f64, (i / 2) % 3, f64::from(*b)))
            .collect();
        // Both outcome classes are needed for the logistic fit.
        prop_assume!(bits.iter().any(|b| *b) && bits.iter().any(|b| !*b));
        let (c, alg) = binary_cohort(&rows);
        let cfg = EstimationConfig {
            outcome_model: glm(Formula::main_effects(&["K", "C"])),
            positivity: PositivityOptions { policy: PositivityPolicy::Flag, ..Default::default() },
            ..Default::default()
        };
        let est = Estimator::new(&c, &alg, &cfg).unwrap();
        for m in [Method::Naive, Method::Std, Method::Ipw, Method::Tmle] {
            for e in Estimand::ALL {
                if let Ok(r) = est.estimate_effect(e, m) {
                    prop_assert!((0.0..=1.0).contains(&r.pm_mean));
                    prop_assert!((0.0..=1.0).contains(&r.control_mean));
                }
            }
        }
    }

    #[test]
    fn tmle_within_declared_bounds(ys in proptest::collection::vec(-5.0f64..5.0, 24)) {
        let schema = Arc::new(Schema::new(vec![CovariateDef::binary("C")]).unwrap());
        let arms = Arc::new(ArmSpec::new(vec!["k0".into()], vec!["k1".into()]).unwrap());
        let units = ys.iter().enumerate().map(|(i, &y)| UnitRecord {
            unit_id: format!("u{i}"),
            covariates: vec![(i % 2) as f64],
            arm: None,
            version: Some((i / 2) % 2),
            outcome: Some(y),
            counterfactuals: None,
        }).collect();
        let c = CohortTable::new(schema.clone(), arms.clone(), OutcomeKind::Continuous, units).unwrap();
        let alg = PmAlgorithm::new(vec![]).rule(&[], "k1").bind(&schema, &arms).unwrap();
        let cfg = EstimationConfig {
            outcome_model: glm(Formula::intercept_only()),
            tmle: TmleOptions { bounds: Some((-6.0, 6.0)) },
            ..Default::default()
        };
        let est = Estimator::new(&c, &alg, &cfg).unwrap();
        let v = est.tmle_mean(&Regime::Version(1)).unwrap().value;
        prop_assert!((-6.0..=6.0).contains(&v));
    }

    #[test]
    fn ipw_invariant_to_weight_scale(scale in 0.01f64..100.0) {
        // Scaling the propensity floor's counterpart: multiply every weight
        // by a constant through a fixed stabilizing factor.
        let (c, alg) = discrete_fixture(&["k1", "k2"]);
        let cfg = saturated_config(&["K", "C1", "C2"], &["C1", "C2"], &["C1", "C2"]);
        let est = Estimator::new(&c, &alg, &cfg).unwrap();
        let regime = est.pm_regime().unwrap();
        let fit = est.propensity_fit().unwrap();
        let terms = est.contributions(&regime);
        let ratio = |s: f64| {
            let (n, d) = terms.iter().fold((0.0, 0.0), |(n, d), &(i, m, k)| {
                let w = s * m / fit.f[i][k];
                (n + w * c.units()[i].outcome.unwrap(), d + w)
            });
            n / d
        };
        prop_assert!((ratio(scale) - est.ipw_mean(&regime).unwrap().value).abs() <= 1e-10);
    }
}
