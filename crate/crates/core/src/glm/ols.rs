use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{inf_norm, DesignMatrix, FitInfo, RIDGE_LAMBDA};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub info: FitInfo,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::Schema(format!(
                "row width {} does not match model width {}",
                row.len(),
                self.coefficients.len()
            )));
        }
        Ok(dot(row, &self.coefficients))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares via QR. A rank-deficient design falls back to a ridge
/// solve with `λ = 1e-8` and sets `info.ridge`.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<LinearModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Schema(format!("design has {n} rows but y has {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite response".into()));
    }
    if n == 0 {
        return Err(Error::Model("no observations".into()));
    }
    let xm = x.matrix();
    let yv = DVector::from_column_slice(y);

    let rank_deficient = n < p || {
        let sv = xm.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        max == 0.0 || min <= max * 1e-10
    };

    let beta = if rank_deficient {
        let mut xtx = xm.transpose() * xm;
        for i in 0..p {
            xtx[(i, i)] += RIDGE_LAMBDA;
        }
        let xty = xm.transpose() * &yv;
        xtx.cholesky()
            .map(|c| c.solve(&xty))
            .ok_or_else(|| Error::Model("ridge system not positive definite".into()))?
    } else {
        let qr = xm.clone().qr();
        let qty = qr.q().transpose() * &yv;
        let r: DMatrix<f64> = qr.r();
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Model("singular triangular factor".into()))?
    };

    let resid = &yv - xm * &beta;
    let grad = xm.transpose() * resid;
    Ok(LinearModel {
        coefficients: beta.iter().copied().collect(),
        names: x.names().to_vec(),
        info: FitInfo {
            iterations: 1,
            gradient_norm: inf_norm(&grad),
            converged: true,
            ridge: rank_deficient,
            separation: false,
        },
    })
}
