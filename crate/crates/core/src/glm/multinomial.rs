use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ols::dot;
use super::{damped_solve, inf_norm, DesignMatrix, FitInfo, ETA_CAP, MAX_ITERATIONS, SCORE_TOLERANCE, SEPARATION_ETA};
use crate::error::{Error, Result};

/// Softmax regression with one coefficient vector per class; the reference
/// class's vector is identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialModel {
    pub n_classes: usize,
    pub reference: usize,
    pub coefficients: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub info: FitInfo,
}

impl MultinomialModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        let p = self.names.len();
        if row.len() != p {
            return Err(Error::Schema(format!("row width {} does not match model width {p}", row.len())));
        }
        let eta: Vec<f64> = self.coefficients.iter().map(|b| dot(row, b)).collect();
        Ok(softmax(&eta))
    }
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(eta: &[f64]) -> f64 {
    let m = eta.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    m + eta.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Unpacks the stacked non-reference parameters into per-class vectors.
fn unstack(theta: &[f64], n_classes: usize, reference: usize, p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n_classes);
    let mut it = theta.chunks(p);
    for j in 0..n_classes {
        if j == reference {
            out.push(vec![0.0; p]);
        } else {
            out.push(it.next().expect("parameter length").to_vec());
        }
    }
    out
}

fn linear_predictors(x: &DesignMatrix, coefs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let xm = x.matrix();
    (0..x.nrows())
        .map(|i| {
            coefs
                .iter()
                .map(|b| xm.row(i).iter().zip(b).map(|(a, c)| a * c).sum())
                .collect()
        })
        .collect()
}

/// Multinomial log-likelihood at the stacked non-reference parameters.
pub fn multinomial_log_likelihood(
    x: &DesignMatrix,
    y: &[usize],
    n_classes: usize,
    reference: usize,
    theta: &[f64],
) -> f64 {
    let coefs = unstack(theta, n_classes, reference, x.ncols());
    linear_predictors(x, &coefs)
        .iter()
        .zip(y)
        .map(|(eta, &yi)| eta[yi] - log_sum_exp(eta))
        .sum()
}

/// Gradient of [`multinomial_log_likelihood`], stacked like `theta`.
pub fn multinomial_score(x: &DesignMatrix, y: &[usize], n_classes: usize, reference: usize, theta: &[f64]) -> Vec<f64> {
    let p = x.ncols();
    let coefs = unstack(theta, n_classes, reference, p);
    let xm = x.matrix();
    let mut g = vec![0.0; (n_classes - 1) * p];
    for (i, eta) in linear_predictors(x, &coefs).iter().enumerate() {
        let pr = softmax(eta);
        for (slot, j) in (0..n_classes).filter(|j| *j != reference).enumerate() {
            let r = f64::from(y[i] == j) - pr[j];
            for c in 0..p {
                g[slot * p + c] += r * xm[(i, c)];
            }
        }
    }
    g
}

/// Multinomial logistic regression by Newton-Raphson on the stacked score.
///
/// Class labels are `0..n_classes`; every class must be observed.
pub fn fit_multinomial(x: &DesignMatrix, y: &[usize], n_classes: usize, reference: usize) -> Result<MultinomialModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Schema(format!("design has {n} rows but y has {}", y.len())));
    }
    if n_classes < 2 {
        return Err(Error::Model("multinomial regression needs at least two classes".into()));
    }
    if reference >= n_classes {
        return Err(Error::Model(format!("reference class {reference} out of range")));
    }
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        if c >= n_classes {
            return Err(Error::Model(format!("class label {c} out of range")));
        }
        counts[c] += 1;
    }
    if let Some(absent) = counts.iter().position(|c| *c == 0) {
        return Err(Error::Model(format!("class {absent} absent from training data")));
    }

    let xm = x.matrix();
    let m = n_classes - 1;
    let d = m * p;
    let others: Vec<usize> = (0..n_classes).filter(|j| *j != reference).collect();
    let mut theta = vec![0.0; d];
    let mut info = FitInfo::default();
    let mut ll = multinomial_log_likelihood(x, y, n_classes, reference, &theta);

    for it in 1..=MAX_ITERATIONS {
        info.iterations = it;
        let coefs = unstack(&theta, n_classes, reference, p);
        let probs: Vec<Vec<f64>> = linear_predictors(x, &coefs).iter().map(|e| softmax(e)).collect();
        let mut grad = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..n {
            let row = xm.row(i);
            let pr = &probs[i];
            for (a, &j) in others.iter().enumerate() {
                let r = f64::from(y[i] == j) - pr[j];
                for c in 0..p {
                    grad[a * p + c] += r * row[c];
                }
                for (b, &l) in others.iter().enumerate().skip(a) {
                    let w = pr[j] * (f64::from(j == l) - pr[l]);
                    if w == 0.0 {
                        continue;
                    }
                    for c1 in 0..p {
                        let v1 = w * row[c1];
                        if v1 == 0.0 {
                            continue;
                        }
                        for c2 in 0..p {
                            h[(a * p + c1, b * p + c2)] += v1 * row[c2];
                        }
                    }
                }
            }
        }
        for a in 0..m {
            for b in (a + 1)..m {
                for c1 in 0..p {
                    for c2 in 0..p {
                        h[(b * p + c2, a * p + c1)] = h[(a * p + c1, b * p + c2)];
                    }
                }
            }
        }
        info.gradient_norm = inf_norm(&grad);
        if info.gradient_norm <= SCORE_TOLERANCE {
            info.converged = true;
            break;
        }
        let (step, damped) = damped_solve(&h, &grad);
        info.ridge |= damped;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cll = multinomial_log_likelihood(x, y, n_classes, reference, &cand);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cll)) = accepted else { break };
        if max_eta(x, &cand, n_classes, reference) > ETA_CAP {
            info.separation = true;
            break;
        }
        theta = cand;
        ll = cll;
    }
    info.separation |= max_eta(x, &theta, n_classes, reference) > SEPARATION_ETA;
    if info.converged || info.separation {
        let g = multinomial_score(x, y, n_classes, reference, &theta);
        info.gradient_norm = g.iter().fold(0.0, |a, v| a.max(v.abs()));
    }

    Ok(MultinomialModel {
        n_classes,
        reference,
        coefficients: unstack(&theta, n_classes, reference, p),
        names: x.names().to_vec(),
        info,
    })
}

fn max_eta(x: &DesignMatrix, theta: &[f64], n_classes: usize, reference: usize) -> f64 {
    let coefs = unstack(theta, n_classes, reference, x.ncols());
    linear_predictors(x, &coefs)
        .iter()
        .flat_map(|e| e.iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_classes_give_zero_intercepts() {
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let m = fit_multinomial(&DesignMatrix::intercept_only(12), &y, 3, 0).unwrap();
        for c in &m.coefficients {
            assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-10);
        }
    }

    fn counts_10_20_10() -> Vec<usize> {
        let mut y = vec![0usize; 10];
        y.extend(vec![1usize; 20]);
        y.extend(vec![2usize; 10]);
        y
    }

    #[test]
    fn intercepts_are_empirical_log_odds_first_reference() {
        // reference = the first class: log(20/10) = ln 2, log(10/10) = 0
        let m = fit_multinomial(&DesignMatrix::intercept_only(40), &counts_10_20_10(), 3, 0).unwrap();
        assert_abs_diff_eq!(m.coefficients[1][0], 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(m.coefficients[2][0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn intercepts_are_empirical_log_odds_middle_reference() {
        let m = fit_multinomial(&DesignMatrix::intercept_only(40), &counts_10_20_10(), 3, 1).unwrap();
        // log(10/20) = −ln 2 for class 0 and class 2 relative to the reference
        assert_abs_diff_eq!(m.coefficients[0][0], -(2f64.ln()), epsilon = 1e-9);
        assert_abs_diff_eq!(m.coefficients[1][0], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(m.coefficients[2][0], -(2f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn zero_coefficients_predict_uniform() {
        let m = MultinomialModel {
            n_classes: 3,
            reference: 0,
            coefficients: vec![vec![0.0, 0.0]; 3],
            names: vec!["a".into(), "b".into()],
            info: FitInfo::default(),
        };
        for p in m.predict_proba(&[1.0, 5.0]).unwrap() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn absent_class_rejected() {
        assert!(fit_multinomial(&DesignMatrix::intercept_only(4), &[0, 0, 2, 2], 3, 0).is_err());
    }
}
