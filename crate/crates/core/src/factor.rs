//! Principal-components estimation of the factor structure in an error panel.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FgmError, Result};
use crate::matrix::{MatrixRole, SymMatrix};
use crate::panel::{second_moment, ErrorPanel};

/// Gap between the q-th and (q+1)-th eigenvalue, relative to the largest,
/// below which the retained subspace is reported as indeterminate.
const EIGEN_TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FactorDecomposition {
    /// `p × q`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// `T × q`, row `t` is `B̂'e_t`.
    pub factors: DMatrix<f64>,
    /// `T × p`, `e_t − B̂f̂_t`.
    pub residuals: DMatrix<f64>,
    pub q: usize,
    pub sigma_f: SymMatrix,
    pub sigma_eps: SymMatrix,
    /// Retained eigenvalues of `E'E/T`, descending.
    pub eigenvalues: Vec<f64>,
}

impl FactorDecomposition {
    /// The `q = 0` decomposition: no factors, residuals equal to the panel.
    pub fn trivial(panel: &ErrorPanel) -> Result<Self> {
        let e = panel.values();
        let (t, p) = e.shape();
        Ok(Self {
            loadings: DMatrix::zeros(p, 0),
            factors: DMatrix::zeros(t, 0),
            residuals: e.clone(),
            q: 0,
            sigma_f: SymMatrix::new(DMatrix::zeros(0, 0), MatrixRole::Covariance)?,
            sigma_eps: second_moment(e)?,
            eigenvalues: Vec::new(),
        })
    }
}

/// Descending spectrum and the leading `k` unit eigenvectors of `E'E/T`.
///
/// Works on the `T × T` Gram matrix when `p > T`; the nonzero spectra agree.
fn leading_eigen(e: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (t, p) = e.shape();
    let tf = t as f64;
    let (mat, via_gram) = if p <= t {
        (second_moment(e)?.into_inner(), false)
    } else {
        let g = e * e.transpose() / tf;
        (
            SymMatrix::symmetrized(&g, MatrixRole::Covariance)?.into_inner(),
            true,
        )
    };
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut vecs = DMatrix::zeros(p, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = if via_gram {
            let mu = eig.eigenvalues[i];
            if !(mu > 0.0) {
                return Err(FgmError::DegenerateProblem(format!(
                    "eigenvalue {c} of the second-moment matrix is not positive"
                )));
            }
            let u = eig.eigenvectors.column(i);
            let b = e.tr_mul(&u);
            let n = b.norm();
            b / n
        } else {
            eig.eigenvectors.column(i).into_owned()
        };
        fix_sign(&mut v);
        vecs.set_column(c, &v);
    }
    Ok((values, vecs))
}

/// Largest-magnitude entry made positive; ties go to the lowest index.
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

fn check_q(q: usize, t: usize, p: usize, what: &str) -> Result<()> {
    if q == 0 || q >= t.min(p) {
        return Err(FgmError::InvalidParameter(format!(
            "{what} must satisfy 1 <= {what} < min(T, p) = {}, got {q}",
            t.min(p)
        )));
    }
    Ok(())
}

pub fn estimate_factors(panel: &ErrorPanel, q: usize) -> Result<FactorDecomposition> {
    let e = panel.values();
    let (t, p) = e.shape();
    check_q(q, t, p, "q")?;
    let (values, loadings) = leading_eigen(e, q)?;
    if values.len() > q
        && values[q - 1] - values[q] <= EIGEN_TIE_TOL * values[0].abs().max(f64::MIN_POSITIVE)
    {
        log::warn!(
            "eigenvalues {} and {} of the second-moment matrix coincide; the factor space is not identified",
            q,
            q + 1
        );
    }
    let factors = e * &loadings;
    let residuals = e - &factors * loadings.transpose();
    let tf = t as f64;
    let sigma_f = SymMatrix::symmetrized(&(factors.tr_mul(&factors) / tf), MatrixRole::Covariance)?;
    let sigma_eps = second_moment(&residuals)?;
    Ok(FactorDecomposition {
        loadings,
        factors,
        residuals,
        q,
        sigma_f,
        sigma_eps,
        eigenvalues: values[..q].to_vec(),
    })
}

/// IC1 scores for `q = 1..=q_max` (index `q − 1`).
///
/// `V(q) = (tr(E'E/T) − Σ_{i≤q} μ_i)/p` is the mean squared residual after
/// removing `q` principal components.
pub fn ic1_scores(panel: &ErrorPanel, q_max: usize) -> Result<Vec<f64>> {
    let e = panel.values();
    let (t, p) = e.shape();
    check_q(q_max, t, p, "q_max")?;
    let (values, _) = leading_eigen(e, 0)?;
    let (tf, pf) = (t as f64, p as f64);
    let total = e.norm_squared() / tf;
    let penalty = (pf + tf) / (pf * tf) * (pf * tf / (pf + tf)).ln();
    let mut removed = 0.0;
    Ok((1..=q_max)
        .map(|q| {
            removed += values[q - 1];
            let v = (total - removed) / pf;
            let fit = if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
            fit + q as f64 * penalty
        })
        .collect())
}

/// Factor count minimizing IC1 over `1..=q_max`; ties go to the smaller count.
pub fn select_num_factors(panel: &ErrorPanel, q_max: usize) -> Result<usize> {
    let scores = ic1_scores(panel, q_max)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best + 1)
}
