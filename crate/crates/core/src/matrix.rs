//! Symmetric matrices tagged with their statistical role.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FgmError, Result};

/// Relative tolerance used when checking symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixRole {
    Covariance,
    Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdStatus {
    VerifiedPd,
    Unverified,
}

/// A square symmetric matrix (covariance or precision).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
    role: MatrixRole,
    pd_status: PdStatus,
}

impl SymMatrix {
    /// Wraps `data` after checking that it is square, finite and symmetric.
    pub fn new(data: DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        if !data.is_square() {
            return Err(FgmError::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FgmError::InvalidInput(
                "matrix has non-finite entries".into(),
            ));
        }
        let asym = max_asymmetry(&data);
        let scale = data.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(FgmError::InvalidInput(format!(
                "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
            )));
        }
        Ok(Self {
            data,
            role,
            pd_status: PdStatus::Unverified,
        })
    }

    /// Builds `(m + m') / 2`, which is symmetric by construction.
    pub fn symmetrized(m: &DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        if !m.is_square() {
            return Err(FgmError::InvalidInput("matrix is not square".into()));
        }
        let data = (m + m.transpose()) * 0.5;
        Self::new(data, role)
    }

    pub fn identity(p: usize, role: MatrixRole) -> Self {
        Self {
            data: DMatrix::identity(p, p),
            role,
            pd_status: PdStatus::VerifiedPd,
        }
    }

    /// Attempts a Cholesky factorization and records the outcome.
    pub fn verify_pd(mut self) -> Self {
        self.pd_status = if Cholesky::new(self.data.clone()).is_some() {
            PdStatus::VerifiedPd
        } else {
            PdStatus::Unverified
        };
        self
    }

    pub(crate) fn with_status(mut self, status: PdStatus) -> Self {
        self.pd_status = status;
        self
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn pd_status(&self) -> PdStatus {
        self.pd_status
    }

    pub fn is_verified_pd(&self) -> bool {
        self.pd_status == PdStatus::VerifiedPd
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.data.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Inverse through a Cholesky factorization; fails if not PD.
    pub fn inverse(&self, role: MatrixRole) -> Result<SymMatrix> {
        let inv = cholesky_inverse(&self.data)?;
        Ok(SymMatrix::symmetrized(&inv, role)?.with_status(PdStatus::VerifiedPd))
    }

    /// `ι' M ι`.
    pub fn total_sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn row_sums(&self) -> DVector<f64> {
        let ones = DVector::from_element(self.dim(), 1.0);
        &self.data * ones
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn cholesky_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| FgmError::Numeric("matrix is not positive definite".into()))
}

/// Spectral (operator) norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

/// Maximum absolute column sum.
pub fn l1_operator_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖a - b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Partial correlations `-θ_ij / sqrt(θ_ii θ_jj)` with a unit diagonal.
pub fn partial_correlations(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = theta.nrows();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            -theta[(i, j)] / (theta[(i, i)] * theta[(j, j)]).sqrt()
        }
    })
}
