//! Weighted graphical lasso by block coordinate descent.
//!
//! `W` starts at `S + λI` and keeps that diagonal. Each column `j` solves a
//! lasso in `β` against `W₁₁` and `s₁₂`, then sets `w₁₂ = W₁₁β`. On
//! convergence the precision is recovered column-wise from
//! `1/θ₂₂ = w₂₂ − β'w₁₂` and `θ₁₂ = −θ₂₂β`.
//!
//! With weighting, the penalty on `θ_ij` is `λ d_i d_j` where `d² = diag(W)`
//! at initialization. Each column subproblem is rescaled so the lasso solver
//! still sees a single scalar penalty.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{FgmError, Result};
use crate::lasso::{cd_core, LassoOptions};
use crate::matrix::{MatrixRole, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    /// Convergence when the mean absolute change of the off-diagonal of `W`
    /// over a full cycle falls below `tol · mean|s_ij|` (i ≠ j).
    pub tol: f64,
    pub max_cycles: usize,
    pub lasso: LassoOptions,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_cycles: 100,
            lasso: LassoOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub theta: SymMatrix,
    pub w: SymMatrix,
    pub lambda: f64,
    pub n_outer_cycles: usize,
    pub converged: bool,
    /// `log det Θ − tr(WΘ)` at the final `W`.
    pub loglik: f64,
    /// Column coefficient vectors, kept for warm starts along a penalty path.
    pub(crate) betas: DMatrix<f64>,
}

impl GlassoFit {
    pub fn warm_start(&self) -> GlassoWarmStart<'_> {
        GlassoWarmStart {
            w: self.w.data(),
            betas: &self.betas,
        }
    }
}

/// Previous solution used to seed a fit at a nearby penalty.
#[derive(Debug, Clone, Copy)]
pub struct GlassoWarmStart<'a> {
    w: &'a DMatrix<f64>,
    betas: &'a DMatrix<f64>,
}

pub fn glasso_fit(
    s: &SymMatrix,
    lambda: f64,
    weighted: bool,
    opts: &GlassoOptions,
) -> Result<GlassoFit> {
    glasso_fit_warm(s, lambda, weighted, opts, None)
}

pub fn glasso_fit_warm(
    s: &SymMatrix,
    lambda: f64,
    weighted: bool,
    opts: &GlassoOptions,
    warm: Option<GlassoWarmStart<'_>>,
) -> Result<GlassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(FgmError::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let s = s.data();
    let p = s.nrows();
    if p == 0 {
        return Err(FgmError::InvalidInput("empty covariance matrix".into()));
    }
    for j in 0..p {
        if !(s[(j, j)] + lambda > 0.0) {
            return Err(FgmError::DegenerateProblem(format!(
                "s_jj + lambda must be positive (variable {j})"
            )));
        }
    }

    let d: DVector<f64> = if weighted {
        DVector::from_fn(p, |j, _| (s[(j, j)] + lambda).sqrt())
    } else {
        DVector::from_element(p, 1.0)
    };

    let mut w = match warm {
        Some(ws) if ws.w.nrows() == p => ws.w.clone(),
        _ => s.clone(),
    };
    for j in 0..p {
        w[(j, j)] = s[(j, j)] + lambda;
    }
    let mut betas = match warm {
        Some(ws) if ws.betas.shape() == (p - 1, p) => ws.betas.clone(),
        _ => DMatrix::zeros(p.saturating_sub(1), p),
    };

    let off_scale = if p > 1 {
        let mut acc = 0.0;
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    acc += s[(i, j)].abs();
                }
            }
        }
        acc / (p * (p - 1)) as f64
    } else {
        0.0
    };

    let n = p - 1;
    // column j of `betas` stored at full length with a zero in slot j
    let mut beta = DVector::zeros(p);
    let mut grad = DVector::zeros(p);
    let mut pen = DVector::zeros(p);
    let mut scale = DVector::zeros(p);
    let mut cycles = 0;
    let mut converged = p == 1;

    while !converged && cycles < opts.max_cycles {
        cycles += 1;
        let mut total_change = 0.0;
        for j in 0..p {
            for (a, ia) in others(p, j).enumerate() {
                beta[ia] = betas[(a, j)];
                pen[ia] = lambda * d[j] * d[ia];
            }
            beta[j] = 0.0;
            pen[j] = 0.0;
            for k in 0..p {
                scale[k] = d[j] * d[k];
            }
            grad.fill(0.0);
            for k in others(p, j) {
                if beta[k] != 0.0 {
                    grad.axpy(beta[k], &w.column(k), 1.0);
                }
            }
            let lin = &s.as_slice()[j * p..(j + 1) * p];
            cd_core(
                &w,
                lin,
                pen.as_slice(),
                Some(scale.as_slice()),
                Some(j),
                &mut beta,
                &mut grad,
                &opts.lasso,
            );
            // grad now holds W11 β, the new w12
            for (a, ia) in others(p, j).enumerate() {
                betas[(a, j)] = beta[ia];
                let new = grad[ia];
                total_change += (new - w[(ia, j)]).abs();
                w[(ia, j)] = new;
                w[(j, ia)] = new;
            }
        }
        let mean_change = total_change / (p * n) as f64;
        converged = mean_change <= opts.tol * off_scale;
    }
    if !converged {
        log::warn!("graphical lasso did not converge in {cycles} cycles at lambda = {lambda:e}");
    }

    // recover Θ column by column
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut bw = 0.0;
        for (a, ia) in others(p, j).enumerate() {
            bw += betas[(a, j)] * w[(ia, j)];
        }
        let denom = w[(j, j)] - bw;
        if !(denom > 0.0) {
            return Err(FgmError::Numeric(format!(
                "non-positive Schur complement {denom:e} for column {j}"
            )));
        }
        let t22 = 1.0 / denom;
        theta[(j, j)] = t22;
        for (a, ia) in others(p, j).enumerate() {
            theta[(ia, j)] = -t22 * betas[(a, j)];
        }
    }
    let theta = SymMatrix::symmetrized(&theta, MatrixRole::Precision)?.verify_pd();
    let w = SymMatrix::symmetrized(&w, MatrixRole::Covariance)?;
    let loglik = if theta.is_verified_pd() {
        gaussian_loglik(&theta, &w)?
    } else {
        f64::NEG_INFINITY
    };
    Ok(GlassoFit {
        theta,
        w,
        lambda,
        n_outer_cycles: cycles,
        converged,
        loglik,
        betas,
    })
}

#[inline]
fn others(p: usize, j: usize) -> impl Iterator<Item = usize> {
    (0..p).filter(move |&i| i != j)
}

/// `log det Θ − tr(WΘ)`, with the determinant taken from a Cholesky factor.
pub fn gaussian_loglik(theta: &SymMatrix, w: &SymMatrix) -> Result<f64> {
    if theta.dim() != w.dim() {
        return Err(FgmError::InvalidInput(
            "theta and w differ in dimension".into(),
        ));
    }
    let chol = Cholesky::new(theta.data().clone())
        .ok_or_else(|| FgmError::Domain("theta is not positive definite".into()))?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let trace = theta.data().component_mul(w.data()).sum();
    Ok(logdet - trace)
}
