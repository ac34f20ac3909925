//! Generalized linear models used as outcome and treatment models:
//! least squares, binary logistic and multinomial logistic regression.
//!
//! Logistic fits use Newton-Raphson (iteratively reweighted least squares)
//! with step halving. A fit stops when the score's infinity norm drops to
//! [`SCORE_TOLERANCE`] or after [`MAX_ITERATIONS`] iterations.

mod design;
mod logistic;
mod multinomial;
mod ols;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use design::{DesignMatrix, Encoder, Formula, Term, ARM_FACTOR, SATURATED, VERSION_FACTOR};
pub use logistic::{fit_logistic, logistic_log_likelihood, logistic_score, sigmoid, LogisticModel};
pub use multinomial::{fit_multinomial, multinomial_log_likelihood, multinomial_score, MultinomialModel};
pub use ols::{fit_ols, LinearModel};

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Linear predictors beyond this magnitude mean the likelihood is being
/// maximized at infinity.
pub(crate) const SEPARATION_ETA: f64 = 15.0;
pub(crate) const ETA_CAP: f64 = 30.0;

/// Convergence metadata attached to every fitted model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// A ridge term was added (rank deficiency or ill-conditioned Hessian).
    pub ridge: bool,
    /// Fitted probabilities saturated at 0 or 1.
    pub separation: bool,
}

impl FitInfo {
    pub fn flags(&self, label: &str) -> Vec<String> {
        let mut f = Vec::new();
        if self.ridge {
            f.push(format!("{label}:ridge"));
        }
        if self.separation {
            f.push(format!("{label}:separation"));
        }
        if !self.converged {
            f.push(format!("{label}:not-converged"));
        }
        f
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `h * delta = g` for a symmetric positive (semi)definite `h`,
/// adding an increasing ridge when the Cholesky factorization fails.
/// Returns the step and whether damping was needed.
fn damped_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return (d, false);
        }
    }
    let scale = (h.trace() / h.nrows() as f64).abs().max(1.0);
    let mut lambda = RIDGE_LAMBDA * scale;
    loop {
        let mut hh = h.clone();
        for i in 0..hh.nrows() {
            hh[(i, i)] += lambda;
        }
        if let Some(ch) = hh.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return (d, true);
            }
        }
        lambda *= 10.0;
        if lambda > 1e12 * scale {
            return (DVector::zeros(g.len()), true);
        }
    }
}
