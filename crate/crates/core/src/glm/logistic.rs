use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ols::dot;
use super::{damped_solve, inf_norm, DesignMatrix, FitInfo, ETA_CAP, MAX_ITERATIONS, SCORE_TOLERANCE, SEPARATION_ETA};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub info: FitInfo,
}

impl LogisticModel {
    /// P(y = 1 | row).
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::Schema(format!(
                "row width {} does not match model width {}",
                row.len(),
                self.coefficients.len()
            )));
        }
        Ok(sigmoid(dot(row, &self.coefficients)))
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood at `beta`.
pub fn logistic_log_likelihood(x: &DesignMatrix, y: &[f64], beta: &[f64]) -> f64 {
    let eta = x.matrix() * DVector::from_column_slice(beta);
    eta.iter().zip(y).map(|(e, yi)| yi * e - softplus(*e)).sum()
}

/// Gradient of [`logistic_log_likelihood`] with respect to `beta`.
pub fn logistic_score(x: &DesignMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let xm = x.matrix();
    let eta = xm * DVector::from_column_slice(beta);
    let r = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(e, yi)| yi - sigmoid(*e)));
    (xm.transpose() * r).iter().copied().collect()
}

/// Binary logistic regression by Newton-Raphson.
///
/// Separated data drive coefficients to infinity; the fit then stops at the
/// last iterate whose linear predictors stay below the cap and sets
/// `info.separation` instead of failing.
pub fn fit_logistic(x: &DesignMatrix, y: &[f64]) -> Result<LogisticModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Schema(format!("design has {n} rows but y has {}", y.len())));
    }
    if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::Model(format!("logistic response must be 0/1, got {bad}")));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateOutcome("logistic response has a single class".into()));
    }

    let xm = x.matrix();
    let mut beta = DVector::zeros(p);
    let mut info = FitInfo::default();
    let mut ll = logistic_log_likelihood(x, y, beta.as_slice());

    for it in 1..=MAX_ITERATIONS {
        info.iterations = it;
        let eta = xm * &beta;
        let prob: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        let grad = xm.transpose() * DVector::from_iterator(n, prob.iter().zip(y).map(|(pi, yi)| yi - pi));
        info.gradient_norm = inf_norm(&grad);
        if info.gradient_norm <= SCORE_TOLERANCE {
            info.converged = true;
            break;
        }
        let w: Vec<f64> = prob.iter().map(|pi| pi * (1.0 - pi)).collect();
        let mut xw = xm.clone();
        for (i, wi) in w.iter().enumerate() {
            xw.row_mut(i).scale_mut(*wi);
        }
        let h: DMatrix<f64> = xm.transpose() * xw;
        let (step, damped) = damped_solve(&h, &grad);
        info.ridge |= damped;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cll = logistic_log_likelihood(x, y, cand.as_slice());
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cll)) = accepted else { break };
        let eta_max = (xm * &cand).amax();
        if eta_max > ETA_CAP {
            info.separation = true;
            break;
        }
        beta = cand;
        ll = cll;
    }
    let eta_max = (xm * &beta).amax();
    info.separation |= eta_max > SEPARATION_ETA;
    if info.converged || info.separation {
        let g = logistic_score(x, y, beta.as_slice());
        info.gradient_norm = g.iter().fold(0.0, |m, v| m.max(v.abs()));
    }

    Ok(LogisticModel {
        coefficients: beta.iter().copied().collect(),
        names: x.names().to_vec(),
        info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_half() {
        let y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let m = fit_logistic(&DesignMatrix::intercept_only(10), &y).unwrap();
        assert_abs_diff_eq!(m.coefficients[0], 0.0, epsilon = 1e-10);
        assert!(m.info.converged);
    }

    #[test]
    fn saturated_binary_covariate() {
        // x=0: 2 of 4 successes (logit 0); x=1: 3 of 4 (logit ln 3)
        let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let d = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let m = fit_logistic(&d, &y).unwrap();
        assert_abs_diff_eq!(m.coefficients[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.coefficients[1], 3f64.ln(), epsilon = 1e-9);
        assert!(m.info.gradient_norm <= 1e-6);
    }

    #[test]
    fn separation_flagged() {
        let d = DesignMatrix::with_intercept(&[("x", &[0.0, 0.0, 1.0, 1.0])]).unwrap();
        let m = fit_logistic(&d, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(m.info.separation);
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn single_class_is_degenerate() {
        let err = fit_logistic(&DesignMatrix::intercept_only(3), &[1.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateOutcome(_)));
    }

    #[test]
    fn zero_slope_predicts_half() {
        let m = LogisticModel {
            coefficients: vec![0.0, 0.0],
            names: vec![],
            info: FitInfo::default(),
        };
        assert_eq!(m.predict(&[1.0, 42.0]).unwrap(), 0.5);
    }
}
