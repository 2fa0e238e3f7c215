//! Penalty selection: EBIC for the graphical lasso, GIC for nodewise regressions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FgmError, Result};
use crate::glasso::{glasso_fit, glasso_fit_warm, GlassoFit, GlassoOptions};
use crate::lasso::{coordinate_descent, LassoOptions};
use crate::matrix::SymMatrix;

/// Entries with magnitude at or below this count as zero in degrees of freedom.
pub const DF_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub max_frac: f64,
    pub min_frac: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            count: 30,
            max_frac: 1.0,
            min_frac: 0.01,
        }
    }
}

/// Strictly decreasing sequence of positive penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGrid {
    values: Vec<f64>,
    spec: Option<GridSpec>,
}

impl PenaltyGrid {
    /// `spec.count` log-spaced points from `max_frac·λ_max` down to `min_frac·λ_max`.
    pub fn log_spaced(lambda_max: f64, spec: GridSpec) -> Result<Self> {
        if !(lambda_max > 0.0) || !lambda_max.is_finite() {
            return Err(FgmError::InvalidParameter(format!(
                "lambda_max must be positive, got {lambda_max}"
            )));
        }
        if spec.count == 0 || !(spec.min_frac > 0.0) || !(spec.max_frac >= spec.min_frac) {
            return Err(FgmError::InvalidParameter(format!(
                "bad grid spec {spec:?}"
            )));
        }
        let hi = (lambda_max * spec.max_frac).ln();
        let lo = (lambda_max * spec.min_frac).ln();
        let values = if spec.count == 1 {
            vec![hi.exp()]
        } else {
            (0..spec.count)
                .map(|i| (hi + (lo - hi) * i as f64 / (spec.count - 1) as f64).exp())
                .collect()
        };
        let mut grid = Self::from_values(values)?;
        grid.spec = Some(spec);
        Ok(grid)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FgmError::InvalidParameter("penalty grid is empty".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(FgmError::InvalidParameter(
                "penalties must be positive".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FgmError::InvalidParameter(
                "penalty grid must be strictly decreasing".into(),
            ));
        }
        Ok(Self { values, spec: None })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> Option<GridSpec> {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Penalty above which the graphical lasso returns a diagonal precision.
///
/// Unweighted: `max_{i≠j} |s_ij|`. Weighted: the largest absolute correlation,
/// since the weights `d_i d_j` are at least `sqrt(s_ii s_jj)`.
pub fn glasso_lambda_max(s: &SymMatrix, weighted: bool) -> f64 {
    let p = s.dim();
    let mut best = 0.0f64;
    for j in 0..p {
        for i in (j + 1)..p {
            let v = s.get(i, j).abs();
            let v = if weighted {
                let denom = (s.get(i, i) * s.get(j, j)).sqrt();
                if denom > 0.0 {
                    v / denom
                } else {
                    0.0
                }
            } else {
                v
            };
            best = best.max(v);
        }
    }
    best
}

/// Unique nonzero entries on and above the diagonal.
pub fn precision_df(theta: &SymMatrix) -> usize {
    let p = theta.dim();
    let mut df = 0;
    for j in 0..p {
        for i in 0..=j {
            if theta.get(i, j).abs() > DF_ZERO_TOL {
                df += 1;
            }
        }
    }
    df
}

/// `−2 l + log(T)·df + 4·df·log(p)·η`.
pub fn ebic_score(loglik: f64, df: usize, t_obs: usize, p: usize, eta: f64) -> f64 {
    let df = df as f64;
    -2.0 * loglik + (t_obs as f64).ln() * df + 4.0 * df * (p as f64).ln() * eta
}

/// `log(RSS/T) + |S|·(log p / T)·log log T`.
pub fn gic_score(rss_over_t: f64, active: usize, p: usize, t_obs: usize) -> f64 {
    let t = t_obs as f64;
    rss_over_t.ln() + active as f64 * ((p as f64).ln() / t) * t.ln().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PathMode {
    /// Walk the grid from the largest penalty, warm-starting each fit.
    #[default]
    Sequential,
    /// Fit every grid point independently (in parallel when enabled).
    Parallel,
}

#[derive(Debug, Clone)]
pub struct EbicSelection {
    pub lambda_star: f64,
    /// One score per grid point; `NaN` where the fit did not converge.
    pub scores: Vec<f64>,
    pub fit: GlassoFit,
}

/// Selects the graphical-lasso penalty minimizing EBIC.
///
/// The likelihood term is `log det Θ_λ − tr(SΘ_λ)` on the input covariance,
/// so every grid point is scored against the same data.
pub fn ebic_select(
    s: &SymMatrix,
    grid: &PenaltyGrid,
    eta: f64,
    t_obs: usize,
    weighted: bool,
    opts: &GlassoOptions,
    mode: PathMode,
) -> Result<EbicSelection> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(FgmError::InvalidParameter(format!(
            "eta must lie in [0, 1], got {eta}"
        )));
    }
    if grid.is_empty() {
        return Err(FgmError::InvalidParameter("penalty grid is empty".into()));
    }
    let p = s.dim();
    let score_fit = |fit: &GlassoFit| -> f64 {
        if !fit.converged || !fit.theta.is_verified_pd() {
            return f64::NAN;
        }
        match crate::glasso::gaussian_loglik(&fit.theta, s) {
            Ok(l) => ebic_score(l, precision_df(&fit.theta), t_obs, p, eta),
            Err(_) => f64::NAN,
        }
    };

    let fits: Vec<GlassoFit> = match mode {
        PathMode::Sequential => {
            let mut fits: Vec<GlassoFit> = Vec::with_capacity(grid.len());
            for &lambda in grid.values() {
                let fit = match fits.last() {
                    Some(prev) => {
                        glasso_fit_warm(s, lambda, weighted, opts, Some(prev.warm_start()))?
                    }
                    None => glasso_fit(s, lambda, weighted, opts)?,
                };
                fits.push(fit);
            }
            fits
        }
        PathMode::Parallel => crate::par::map_collect(grid.values(), |&lambda| {
            glasso_fit(s, lambda, weighted, opts)
        })?,
    };

    let scores: Vec<f64> = fits.iter().map(score_fit).collect();
    let best = argmin_prefer_last(&scores).ok_or_else(|| {
        FgmError::Numeric("no penalty on the grid produced a converged graphical lasso fit".into())
    })?;
    let skipped = scores.iter().filter(|v| v.is_nan()).count();
    if skipped > 0 {
        log::warn!(
            "EBIC: excluded {skipped} non-converged fits out of {}",
            scores.len()
        );
    }
    let fit = fits.into_iter().nth(best).expect("index in range");
    Ok(EbicSelection {
        lambda_star: grid.values()[best],
        scores,
        fit,
    })
}

/// Minimum over finite scores; ties go to the later (smaller-penalty) entry.
fn argmin_prefer_last(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in scores.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if v > scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GicSelection {
    pub lambda_star: f64,
    pub scores: Vec<f64>,
    pub beta: DVector<f64>,
    /// `‖y − Xβ‖²/T` at the selected penalty.
    pub rss_over_t: f64,
}

/// GIC selection for one regression, from raw data. The model dimension in the
/// penalty is the panel width `predictors.ncols() + 1`.
pub fn gic_select(
    response: &DVector<f64>,
    predictors: &DMatrix<f64>,
    grid: &PenaltyGrid,
) -> Result<GicSelection> {
    let t = response.len();
    if predictors.nrows() != t {
        return Err(FgmError::InvalidInput(
            "response and predictors differ in length".into(),
        ));
    }
    let tf = t as f64;
    let gram = predictors.tr_mul(predictors) / tf;
    let linear = predictors.tr_mul(response) / tf;
    let yy = response.norm_squared() / tf;
    gic_select_moments(
        &gram,
        &linear,
        yy,
        t,
        predictors.ncols() + 1,
        grid,
        &LassoOptions::default(),
    )
}

/// GIC selection from sample moments `X'X/T`, `X'y/T`, `y'y/T`.
pub fn gic_select_moments(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    yy: f64,
    t_obs: usize,
    p_total: usize,
    grid: &PenaltyGrid,
    lasso: &LassoOptions,
) -> Result<GicSelection> {
    if t_obs < 3 {
        return Err(FgmError::InvalidParameter(format!(
            "GIC needs T >= 3, got {t_obs}"
        )));
    }
    if grid.is_empty() {
        return Err(FgmError::InvalidParameter("penalty grid is empty".into()));
    }
    for j in 0..gram.nrows() {
        if !(gram[(j, j)] > 0.0) {
            return Err(FgmError::DegenerateProblem(format!(
                "predictor {j} has zero second moment"
            )));
        }
    }
    let mut beta = DVector::zeros(linear.len());
    let mut scores = Vec::with_capacity(grid.len());
    let mut betas = Vec::with_capacity(grid.len());
    let mut rss = Vec::with_capacity(grid.len());
    for &lambda in grid.values() {
        let (converged, _) = coordinate_descent(gram, linear, lambda, &mut beta, lasso);
        let r = residual_moment(gram, linear, yy, &beta);
        let active = beta.iter().filter(|b| **b != 0.0).count();
        let score = if converged && r > 0.0 {
            gic_score(r, active, p_total, t_obs)
        } else {
            f64::NAN
        };
        scores.push(score);
        betas.push(beta.clone());
        rss.push(r);
    }
    let best = argmin_prefer_last(&scores).ok_or_else(|| {
        FgmError::Numeric("no penalty on the grid produced a usable lasso fit".into())
    })?;
    Ok(GicSelection {
        lambda_star: grid.values()[best],
        scores,
        beta: betas.swap_remove(best),
        rss_over_t: rss[best],
    })
}

/// `y'y/T − 2β'X'y/T + β'(X'X/T)β`, floored at zero.
pub(crate) fn residual_moment(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    yy: f64,
    beta: &DVector<f64>,
) -> f64 {
    (yy - 2.0 * beta.dot(linear) + beta.dot(&(gram * beta))).max(0.0)
}
