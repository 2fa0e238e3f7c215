//! Combination weights and forecast-error diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FgmError, Result};
use crate::matrix::{MatrixRole, PdStatus, SymMatrix};

/// Weights summing to one, with `a_hat = ι'Θι/p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub weights: Vec<f64>,
    pub a_hat: f64,
}

impl CombinationWeights {
    pub fn equal(p: usize) -> Self {
        Self {
            weights: vec![1.0 / p as f64; p],
            a_hat: f64::NAN,
        }
    }

    /// Weights from an explicit vector; the entries must sum to one within 1e-12.
    pub fn from_vec(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || (sum - 1.0).abs() > 1e-12 {
            return Err(FgmError::InvalidInput(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            weights,
            a_hat: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

/// `w = Θι/(ι'Θι)`.
pub fn optimal_weights(theta: &SymMatrix) -> Result<CombinationWeights> {
    let row = theta.row_sums();
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(FgmError::DegenerateProblem(format!(
            "ι'Θι = {total} is not positive; the precision estimate is not PD"
        )));
    }
    let p = theta.dim();
    Ok(CombinationWeights {
        weights: row.iter().map(|r| r / total).collect(),
        a_hat: total / p as f64,
    })
}

/// Per-period combined forecast `w'ŷ_t`.
pub fn combine_forecasts(forecasts: &DMatrix<f64>, w: &CombinationWeights) -> Result<DVector<f64>> {
    if forecasts.ncols() != w.len() {
        return Err(FgmError::InvalidInput(format!(
            "{} forecast columns but {} weights",
            forecasts.ncols(),
            w.len()
        )));
    }
    Ok(forecasts * w.as_vector())
}

/// Population MSFE `w'Σw`.
pub fn msfe(w: &CombinationWeights, sigma: &SymMatrix) -> Result<f64> {
    if sigma.dim() != w.len() {
        return Err(FgmError::InvalidInput(
            "weight and covariance dimensions differ".into(),
        ));
    }
    let v = w.as_vector();
    Ok(v.dot(&(sigma.data() * &v)))
}

/// Mean squared error `(1/n)Σ(y_t − ŷ_t)²`.
pub fn realized_msfe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(FgmError::InvalidInput(format!(
            "realized and forecast lengths {} and {} must match and be nonzero",
            y.len(),
            yhat.len()
        )));
    }
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// `(p / tr S)·I`: the precision whose optimal weights are equal.
pub fn equal_weight_precision(s: &SymMatrix) -> Result<SymMatrix> {
    let p = s.dim();
    let tr = s.trace();
    if !(tr > 0.0) {
        return Err(FgmError::DegenerateProblem(format!(
            "trace of the covariance is {tr}"
        )));
    }
    let m = DMatrix::identity(p, p) * (p as f64 / tr);
    Ok(SymMatrix::new(m, MatrixRole::Precision)?.with_status(PdStatus::VerifiedPd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightErrorReport {
    /// `‖ŵ − w‖₁`.
    pub l1_weight_err: f64,
    /// `|a − â|/|â|`.
    pub msfe_ratio_dev: f64,
}

pub fn weight_error_report(
    theta_hat: &SymMatrix,
    theta_true: &SymMatrix,
) -> Result<WeightErrorReport> {
    let what = optimal_weights(theta_hat)?;
    let w = optimal_weights(theta_true)?;
    if what.len() != w.len() {
        return Err(FgmError::InvalidInput("precision dimensions differ".into()));
    }
    let l1 = what
        .weights
        .iter()
        .zip(&w.weights)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(WeightErrorReport {
        l1_weight_err: l1,
        msfe_ratio_dev: (w.a_hat - what.a_hat).abs() / what.a_hat.abs(),
    })
}
