//! Nodewise-regression precision estimator.
//!
//! Each column is lasso-regressed on the others. The coefficients `γ̂_j` fill
//! row `j` of `Ĉ` (unit diagonal, `−γ̂` off it), and
//! `τ̂²_j = ‖e_j − E₋ⱼγ̂_j‖²/T + λ_j‖γ̂_j‖₁`. The raw estimate is `T̂⁻²Ĉ`, which
//! is generally not symmetric; it is repaired by symmetrize_and_clean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FgmError, Result};
use crate::lasso::{coordinate_descent, LassoOptions};
use crate::matrix::{max_asymmetry, MatrixRole, PdStatus, SymMatrix, SYMMETRY_TOL};
use crate::panel::ErrorPanel;
use crate::tuning::{gic_select_moments, residual_moment, GridSpec, PenaltyGrid};

/// How the per-column penalties `λ_j` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum NodewisePenalty {
    /// Same penalty for every column.
    Uniform(f64),
    /// One penalty per column.
    PerColumn(Vec<f64>),
    /// Select each `λ_j` by GIC on a log-spaced grid below `max_k |x_k'e_j/T|`.
    Gic(GridSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodewiseOptions {
    pub lasso: LassoOptions,
    /// Eigenvalues are floored at this fraction of the largest one.
    pub eig_floor_frac: f64,
}

impl Default for NodewiseOptions {
    fn default() -> Self {
        Self {
            lasso: LassoOptions::default(),
            eig_floor_frac: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodewiseFit {
    pub theta: SymMatrix,
    /// Row `j` holds `γ̂_j` over the other columns in their original order.
    pub gamma_rows: DMatrix<f64>,
    pub tau_sq: DVector<f64>,
    pub lambdas: DVector<f64>,
    /// The raw estimate needed symmetrization or eigenvalue cleaning.
    pub repaired: bool,
    /// Columns whose lasso did not converge.
    pub unconverged: Vec<usize>,
}

struct ColumnFit {
    gamma: DVector<f64>,
    tau_sq: f64,
    lambda: f64,
    converged: bool,
}

pub fn nodewise_fit(
    panel: &ErrorPanel,
    penalty: &NodewisePenalty,
    opts: &NodewiseOptions,
) -> Result<NodewiseFit> {
    let e = panel.values();
    let (t, p) = e.shape();
    for (j, col) in e.column_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            return Err(FgmError::DegenerateColumn {
                column: panel.model_ids()[j].clone(),
            });
        }
    }
    let lambdas_in: Option<Vec<f64>> = match penalty {
        NodewisePenalty::Uniform(l) => Some(vec![*l; p]),
        NodewisePenalty::PerColumn(v) => {
            if v.len() != p {
                return Err(FgmError::InvalidParameter(format!(
                    "{} penalties supplied for {p} columns",
                    v.len()
                )));
            }
            Some(v.clone())
        }
        NodewisePenalty::Gic(_) => {
            if t < 3 {
                return Err(FgmError::InvalidParameter("GIC needs T >= 3".into()));
            }
            None
        }
    };
    if let Some(ls) = &lambdas_in {
        if ls.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(FgmError::InvalidParameter(
                "penalties must be finite and >= 0".into(),
            ));
        }
    }

    let gram_full = crate::panel::second_moment(e)?.into_inner();
    let fit_column = |j: usize| -> Result<ColumnFit> {
        let idx: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let gram = gram_full.select_rows(&idx).select_columns(&idx);
        let linear = DVector::from_iterator(p - 1, idx.iter().map(|&k| gram_full[(k, j)]));
        let yy = gram_full[(j, j)];
        let (gamma, lambda, converged) = match (&lambdas_in, penalty) {
            (Some(ls), _) => {
                let mut gamma = DVector::zeros(p - 1);
                let (conv, _) = coordinate_descent(&gram, &linear, ls[j], &mut gamma, &opts.lasso);
                (gamma, ls[j], conv)
            }
            (None, NodewisePenalty::Gic(spec)) => {
                let lmax = linear.amax();
                if lmax > 0.0 {
                    let grid = PenaltyGrid::log_spaced(lmax, *spec)?;
                    let sel = gic_select_moments(&gram, &linear, yy, t, p, &grid, &opts.lasso)?;
                    (sel.beta, sel.lambda_star, true)
                } else {
                    (DVector::zeros(p - 1), 0.0, true)
                }
            }
            _ => unreachable!(),
        };
        let tau_sq = residual_moment(&gram, &linear, yy, &gamma) + lambda * gamma.lp_norm(1);
        Ok(ColumnFit {
            gamma,
            tau_sq,
            lambda,
            converged,
        })
    };
    let columns: Vec<ColumnFit> = crate::par::map_range(p, fit_column)
        .into_iter()
        .collect::<Result<_>>()?;

    let mut gamma_rows = DMatrix::zeros(p, p - 1);
    let mut tau_sq = DVector::zeros(p);
    let mut lambdas = DVector::zeros(p);
    let mut raw = DMatrix::zeros(p, p);
    let mut unconverged = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        if !(col.tau_sq > 0.0) {
            return Err(FgmError::DegenerateProblem(format!(
                "residual variance of column `{}` is zero",
                panel.model_ids()[j]
            )));
        }
        if !col.converged {
            unconverged.push(j);
        }
        tau_sq[j] = col.tau_sq;
        lambdas[j] = col.lambda;
        raw[(j, j)] = 1.0 / col.tau_sq;
        for (a, k) in (0..p).filter(|&k| k != j).enumerate() {
            gamma_rows[(j, a)] = col.gamma[a];
            raw[(j, k)] = -col.gamma[a] / col.tau_sq;
        }
    }
    if !unconverged.is_empty() {
        log::warn!(
            "nodewise: {} column regressions did not converge",
            unconverged.len()
        );
    }

    let symmetric = max_asymmetry(&raw) <= SYMMETRY_TOL * raw.amax().max(1.0);
    let as_is = if symmetric {
        SymMatrix::new(raw.clone(), MatrixRole::Precision)
            .ok()
            .map(SymMatrix::verify_pd)
    } else {
        None
    };
    let (theta, repaired) = match as_is {
        Some(m) if m.is_verified_pd() => (m, false),
        _ => (symmetrize_and_clean(&raw, opts.eig_floor_frac)?, true),
    };
    Ok(NodewiseFit {
        theta,
        gamma_rows,
        tau_sq,
        lambdas,
        repaired,
        unconverged,
    })
}

/// Symmetrizes by keeping, for each pair, the entry of smaller magnitude, then
/// raises eigenvalues below `eig_floor_frac · λ_max` to that floor.
pub fn symmetrize_and_clean(theta_raw: &DMatrix<f64>, eig_floor_frac: f64) -> Result<SymMatrix> {
    if !theta_raw.is_square() {
        return Err(FgmError::InvalidInput("matrix is not square".into()));
    }
    if theta_raw.iter().any(|v| !v.is_finite()) {
        return Err(FgmError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    if theta_raw.iter().all(|v| *v == 0.0) {
        return Err(FgmError::DegenerateProblem(
            "cannot repair an all-zero matrix".into(),
        ));
    }
    if !(eig_floor_frac > 0.0 && eig_floor_frac < 1.0) {
        return Err(FgmError::InvalidParameter(format!(
            "eig_floor_frac must lie in (0, 1), got {eig_floor_frac}"
        )));
    }
    let p = theta_raw.nrows();
    let mut sym = theta_raw.clone();
    for j in 0..p {
        for i in (j + 1)..p {
            let (a, b) = (theta_raw[(i, j)], theta_raw[(j, i)]);
            let keep = if a.abs() <= b.abs() { a } else { b };
            sym[(i, j)] = keep;
            sym[(j, i)] = keep;
        }
    }

    let eig = SymmetricEigen::new(sym.clone());
    let top = eig.eigenvalues.max();
    // a spectrum with no positive part is floored against its largest magnitude
    let reference = if top > 0.0 {
        top
    } else {
        eig.eigenvalues.amax()
    };
    if !(reference > 0.0) {
        return Err(FgmError::DegenerateProblem(
            "symmetrized matrix is zero; nothing to floor against".into(),
        ));
    }
    let floor = eig_floor_frac * reference;
    if eig.eigenvalues.min() >= floor {
        let m = SymMatrix::new(sym, MatrixRole::Precision)?.verify_pd();
        if m.is_verified_pd() {
            return Ok(m);
        }
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(SymMatrix::symmetrized(&rebuilt, MatrixRole::Precision)?.with_status(PdStatus::VerifiedPd))
}
