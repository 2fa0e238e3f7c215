//! Forecast-error panels and their sample moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{FgmError, Result};
use crate::matrix::{MatrixRole, SymMatrix};

/// A `T x p` panel of forecast errors (realized minus forecast), one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPanel {
    values: DMatrix<f64>,
    t_index: Vec<String>,
    model_ids: Vec<String>,
}

impl ErrorPanel {
    pub fn new(values: DMatrix<f64>, t_index: Vec<String>, model_ids: Vec<String>) -> Result<Self> {
        let (t, p) = values.shape();
        if t < 2 || p < 2 {
            return Err(FgmError::InvalidInput(format!(
                "panel must have T >= 2 and p >= 2, got {t}x{p}"
            )));
        }
        if t_index.len() != t || model_ids.len() != p {
            return Err(FgmError::InvalidInput(format!(
                "label lengths ({}, {}) do not match panel shape {t}x{p}",
                t_index.len(),
                model_ids.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % t, pos / t);
            return Err(FgmError::InvalidInput(format!(
                "non-finite entry at row {row}, model `{}`",
                model_ids[col]
            )));
        }
        Ok(Self {
            values,
            t_index,
            model_ids,
        })
    }

    /// Panel with generated labels `t0..`, `m0..`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let t_index = (0..values.nrows()).map(|i| format!("t{i}")).collect();
        let model_ids = (0..values.ncols()).map(|j| format!("m{j}")).collect();
        Self::new(values, t_index, model_ids)
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_models(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn t_index(&self) -> &[String] {
        &self.t_index
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn column_means(&self) -> DVector<f64> {
        let t = self.n_obs() as f64;
        DVector::from_iterator(
            self.n_models(),
            self.values.column_iter().map(|c| c.sum() / t),
        )
    }

    /// Copy of the panel with every column demeaned.
    pub fn centered(&self) -> ErrorPanel {
        let means = self.column_means();
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
        }
        ErrorPanel {
            values,
            t_index: self.t_index.clone(),
            model_ids: self.model_ids.clone(),
        }
    }

    /// Same labels, new values (used for residual panels).
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<ErrorPanel> {
        ErrorPanel::new(values, self.t_index.clone(), self.model_ids.clone())
    }
}

/// `(1/T) Σ ẽ_t ẽ_t'`, where `ẽ_t` is demeaned when `demean` is set.
pub fn sample_covariance(panel: &ErrorPanel, demean: bool) -> Result<SymMatrix> {
    let centered;
    let e = if demean {
        centered = panel.centered();
        centered.values()
    } else {
        panel.values()
    };
    second_moment(e)
}

/// `(1/T) E'E` for a raw matrix.
pub(crate) fn second_moment(e: &DMatrix<f64>) -> Result<SymMatrix> {
    if e.iter().any(|v| !v.is_finite()) {
        return Err(FgmError::InvalidInput("non-finite entry in panel".into()));
    }
    let t = e.nrows() as f64;
    let mut s = e.tr_mul(e) / t;
    // tr_mul accumulates both triangles in the same order, but force bitwise symmetry anyway
    let p = s.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            s[(j, i)] = s[(i, j)];
        }
    }
    SymMatrix::new(s, MatrixRole::Covariance)
}
