//! Tumour-volume response metrics and response categories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics are taken over days strictly after this one.
pub const FOLLOW_UP_DAY: u32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSeries {
    pub model_id: String,
    pub drug: String,
    /// (day, volume in mm³), strictly increasing days starting at 0.
    pub points: Vec<(u32, f64)>,
}

impl VolumeSeries {
    pub fn validate(&self) -> Result<()> {
        let what = format!("{}/{}", self.model_id, self.drug);
        match self.points.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Data(format!("{what}: no day-0 volume"))),
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Data(format!("{what}: days must be strictly increasing")));
            }
        }
        if let Some((d, v)) = self.points.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Data(format!("{what}: nonpositive volume {v} on day {d}")));
        }
        Ok(())
    }
}

/// Denominator of the percent volume change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// 100 × (V_t − V_0) / V_t.
    #[default]
    Current,
    /// 100 × (V_t − V_0) / V_0.
    Baseline,
}

/// Percent volume change for every day of the series, day 0 included.
pub fn tumor_volume_change(series: &VolumeSeries, denominator: Denominator) -> Result<Vec<(u32, f64)>> {
    series.validate()?;
    let v0 = series.points[0].1;
    Ok(series
        .points
        .iter()
        .map(|&(d, v)| {
            let den = match denominator {
                Denominator::Current => v,
                Denominator::Baseline => v0,
            };
            (d, 100.0 * (v - v0) / den)
        })
        .collect())
}

pub fn best_response(change: &[(u32, f64)]) -> Result<f64> {
    change
        .iter()
        .filter(|(d, _)| *d > FOLLOW_UP_DAY)
        .map(|p| p.1)
        .reduce(f64::min)
        .ok_or(Error::InsufficientFollowUp)
}

/// Running means of the change from day 0 onward.
pub fn average_response(change: &[(u32, f64)]) -> Vec<(u32, f64)> {
    let mut sum = 0.0;
    change
        .iter()
        .enumerate()
        .map(|(i, &(d, v))| {
            sum += v;
            (d, sum / (i + 1) as f64)
        })
        .collect()
}

pub fn best_average_response(change: &[(u32, f64)]) -> Result<f64> {
    best_response(&average_response(change))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMetrics {
    pub best_response: f64,
    pub best_average_response: f64,
}

pub fn response_metrics(series: &VolumeSeries, denominator: Denominator) -> Result<ResponseMetrics> {
    let change = tumor_volume_change(series, denominator)?;
    Ok(ResponseMetrics {
        best_response: best_response(&change)?,
        best_average_response: best_average_response(&change)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResponseCategory {
    CR,
    PR,
    SD,
    PD,
}

impl ResponseCategory {
    /// CR, PR and SD count as responders.
    pub fn responder(self) -> bool {
        self != ResponseCategory::PD
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub category: ResponseCategory,
    pub best_response_max: f64,
    pub best_average_response_max: f64,
}

/// Ordered from best to worst; a response meeting both maxima of a row
/// gets its category, anything else is PD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseThresholds {
    #[serde(default)]
    pub source: String,
    pub categories: Vec<ThresholdRow>,
}

impl Default for ResponseThresholds {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../data/response_thresholds.json")).expect("bundled thresholds")
    }
}

impl ResponseThresholds {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.categories.iter().enumerate() {
            if r.category == ResponseCategory::PD {
                return Err(Error::validation(format!("categories[{i}]"), "PD is the fallback, not a row"));
            }
            if !(r.best_response_max.is_finite() && r.best_average_response_max.is_finite()) {
                return Err(Error::validation(format!("categories[{i}]"), "cutoffs must be finite"));
            }
        }
        Ok(())
    }

    /// Values exactly on a cutoff go to the better category.
    pub fn classify(&self, m: &ResponseMetrics) -> ResponseCategory {
        self.categories
            .iter()
            .find(|r| m.best_response <= r.best_response_max && m.best_average_response <= r.best_average_response_max)
            .map(|r| r.category)
            .unwrap_or(ResponseCategory::PD)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series(points: &[(u32, f64)]) -> VolumeSeries {
        VolumeSeries {
            model_id: "m".into(),
            drug: "d".into(),
            points: points.to_vec(),
        }
    }

    #[test]
    fn printed_formula_examples() {
        let c = tumor_volume_change(&series(&[(0, 100.0), (3, 120.0), (7, 90.0)]), Denominator::Current).unwrap();
        assert_abs_diff_eq!(c[1].1, 100.0 * 20.0 / 120.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[2].1, -100.0 * 10.0 / 90.0, epsilon = 1e-12);
        let b = tumor_volume_change(&series(&[(0, 100.0), (3, 120.0)]), Denominator::Baseline).unwrap();
        assert_abs_diff_eq!(b[1].1, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn best_and_average_response() {
        let c = [(0, 0.0), (3, 16.67), (7, -11.11), (14, -66.67), (21, -25.0)];
        assert_eq!(best_response(&c).unwrap(), -66.67);
        let avg = average_response(&c);
        assert_abs_diff_eq!(avg[3].1, -15.2775, epsilon = 1e-9);
        assert_abs_diff_eq!(best_average_response(&c).unwrap(), -17.222, epsilon = 1e-9);
        assert_eq!(best_response(&[(14, 5.0)]).unwrap(), 5.0);
        assert!(matches!(best_response(&c[..3]), Err(Error::InsufficientFollowUp)));
    }

    #[test]
    fn invalid_series() {
        assert!(series(&[(1, 100.0)]).validate().is_err());
        assert!(series(&[(0, 100.0), (0, 90.0)]).validate().is_err());
        assert!(series(&[(0, 100.0), (4, 0.0)]).validate().is_err());
    }

    #[test]
    fn classification() {
        let t = ResponseThresholds::default();
        t.validate().unwrap();
        let m = |br, bar| ResponseMetrics {
            best_response: br,
            best_average_response: bar,
        };
        assert_eq!(t.classify(&m(-100.0, -60.0)), ResponseCategory::CR);
        assert_eq!(t.classify(&m(-50.0, -20.0)), ResponseCategory::PR);
        assert_eq!(t.classify(&m(-60.0, 0.0)), ResponseCategory::SD);
        assert_eq!(t.classify(&m(35.0, 30.0)), ResponseCategory::SD);
        assert_eq!(t.classify(&m(36.0, 0.0)), ResponseCategory::PD);
        assert!(!ResponseCategory::PD.responder());
        assert!(ResponseCategory::CR.responder());
    }

    proptest! {
        #[test]
        fn scale_invariant(vols in prop::collection::vec(1.0f64..1000.0, 2..8), scale in 0.01f64..100.0) {
            let pts: Vec<(u32, f64)> = vols.iter().enumerate().map(|(i, v)| (i as u32 * 4, *v)).collect();
            let scaled: Vec<(u32, f64)> = pts.iter().map(|&(d, v)| (d, v * scale)).collect();
            for den in [Denominator::Current, Denominator::Baseline] {
                let a = tumor_volume_change(&series(&pts), den).unwrap();
                let b = tumor_volume_change(&series(&scaled), den).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x.1 - y.1).abs() <= 1e-9 * (1.0 + x.1.abs()));
                }
                if let (Ok(x), Ok(y)) = (best_average_response(&a), best_average_response(&b)) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn running_means_within_prefix_range(vals in prop::collection::vec(-100.0f64..100.0, 1..10)) {
            let c: Vec<(u32, f64)> = vals.iter().enumerate().map(|(i, v)| (i as u32 * 3, *v)).collect();
            let avg = average_response(&c);
            for (i, (_, a)) in avg.iter().enumerate() {
                let prefix = &vals[..=i];
                let lo = prefix.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = prefix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
            }
            if let Ok(bar) = best_average_response(&c) {
                let expected = avg.iter().filter(|(d, _)| *d > FOLLOW_UP_DAY).map(|p| p.1).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(bar, expected);
            }
        }
    }
}
