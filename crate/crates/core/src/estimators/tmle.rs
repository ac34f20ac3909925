use crate::error::{Error, Result};
use crate::model::{CohortTable, OutcomeKind};

/// Scaled predictions are kept this far from 0 and 1.
const Q_CLIP: f64 = 1e-6;
const EPS_TOLERANCE: f64 = 1e-10;
const EPS_CAP: f64 = 50.0;

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn expit(x: f64) -> f64 {
    crate::glm::sigmoid(x)
}

pub(crate) fn clip(q: f64) -> f64 {
    q.clamp(Q_CLIP, 1.0 - Q_CLIP)
}

/// Outcome bounds used to map Y into [0, 1].
pub(crate) fn bounds(cohort: &CohortTable, user: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let ys = cohort.units().iter().filter_map(|u| u.outcome);
    if cohort.outcome_kind() == OutcomeKind::Binary {
        return Ok((0.0, 1.0));
    }
    let (min, max) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !min.is_finite() {
        return Err(Error::EmptyCell("no observed outcome".into()));
    }
    match user {
        Some((lo, hi)) => {
            if min < lo || max > hi {
                return Err(Error::validation(
                    "tmle.bounds",
                    format!("observed outcomes [{min}, {max}] fall outside [{lo}, {hi}]"),
                ));
            }
            Ok((lo, hi))
        }
        None => {
            let range = max - min;
            let pad = if range > 0.0 { 0.1 * range } else { 1.0 };
            Ok((min - pad, max + pad))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fluctuation {
    pub epsilon: f64,
    pub flags: Vec<String>,
}

/// Solves the weighted intercept-only fluctuation score
/// `Σ h_i (y_i − expit(offset_i + ε)) = 0` for ε.
///
/// Newton steps are safeguarded by bisection on a bracketing interval;
/// |ε| is capped at 50.
pub fn solve_fluctuation(h: &[f64], offset: &[f64], y: &[f64]) -> Fluctuation {
    let score = |e: f64| -> (f64, f64) {
        h.iter().zip(offset).zip(y).fold((0.0, 0.0), |(s, d), ((hi, o), yi)| {
            let p = expit(o + e);
            (s + hi * (yi - p), d + hi * p * (1.0 - p))
        })
    };
    let total: f64 = h.iter().sum();
    if h.is_empty() || total <= 0.0 {
        return Fluctuation {
            epsilon: 0.0,
            flags: vec!["tmle:zero-clever-covariate".into()],
        };
    }
    // The score is decreasing in ε.
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while score(lo).0 < 0.0 && lo > -EPS_CAP {
        lo = (lo * 2.0).max(-EPS_CAP);
    }
    while score(hi).0 > 0.0 && hi < EPS_CAP {
        hi = (hi * 2.0).min(EPS_CAP);
    }
    // A score that never changes sign (or underflows to zero at the cap)
    // means the target lies at the boundary of [0, 1].
    if score(lo).0 <= 0.0 && lo <= -EPS_CAP {
        return capped(-EPS_CAP);
    }
    if score(hi).0 >= 0.0 && hi >= EPS_CAP {
        return capped(EPS_CAP);
    }
    let mut e = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (s, d) = score(e);
        if s == 0.0 {
            break;
        }
        if s > 0.0 {
            lo = e;
        } else {
            hi = e;
        }
        let newton = if d > 0.0 { e + s / d } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - e).abs();
        e = next;
        if step <= EPS_TOLERANCE || hi - lo <= EPS_TOLERANCE {
            break;
        }
    }
    Fluctuation {
        epsilon: e,
        flags: Vec::new(),
    }
}

fn capped(e: f64) -> Fluctuation {
    Fluctuation {
        epsilon: e,
        flags: vec!["tmle:epsilon-capped".into()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn already_targeted_gives_zero() {
        // Weighted mean of y equals expit(offset): score zero at ε = 0.
        let y = [0.2, 0.6];
        let off = [logit(0.4), logit(0.4)];
        let f = solve_fluctuation(&[1.0, 1.0], &off, &y);
        assert_abs_diff_eq!(f.epsilon, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_for_common_offset() {
        // Common offset: expit(o + ε) = weighted mean of y.
        let y = [0.1, 0.5, 0.9];
        let h = [1.0, 2.0, 1.0];
        let target: f64 = (0.1 + 1.0 + 0.9) / 4.0;
        let f = solve_fluctuation(&h, &[0.0; 3], &y);
        assert_abs_diff_eq!(f.epsilon, logit(target), epsilon = 1e-10);
    }

    #[test]
    fn zero_clever_covariate() {
        let f = solve_fluctuation(&[0.0, 0.0], &[0.0, 0.0], &[0.5, 0.5]);
        assert_eq!(f.epsilon, 0.0);
        assert_eq!(f.flags, vec!["tmle:zero-clever-covariate".to_string()]);
    }

    #[test]
    fn unreachable_target_capped() {
        let f = solve_fluctuation(&[1.0], &[0.0], &[1.0]);
        assert_eq!(f.epsilon, 50.0);
        assert!(!f.flags.is_empty());
    }
}
