//! Factor-augmented autoregressions FAR(k, l) over a rolling window.
//!
//! Every model regresses the target on an intercept, the first `k` principal
//! components of the predictor window and `l` lags of the lag series. All
//! `(1+K)(1+L)` models share one design matrix; each uses a principal
//! submatrix of its cross-product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FgmError, Result};
use crate::factor::estimate_factors;
use crate::panel::ErrorPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarSpec {
    /// Largest number of factors.
    pub k_max: usize,
    /// Largest number of lags.
    pub l_max: usize,
}

impl FarSpec {
    pub fn new(k_max: usize, l_max: usize) -> Self {
        Self { k_max, l_max }
    }

    pub fn n_models(&self) -> usize {
        (1 + self.k_max) * (1 + self.l_max)
    }

    /// `(k, l)` of model `index`; models are ordered by `k`, then `l`.
    pub fn model(&self, index: usize) -> (usize, usize) {
        (index / (1 + self.l_max), index % (1 + self.l_max))
    }

    pub fn model_name(&self, index: usize) -> String {
        let (k, l) = self.model(index);
        format!("far_k{k}_l{l}")
    }

    pub fn model_names(&self) -> Vec<String> {
        (0..self.n_models()).map(|i| self.model_name(i)).collect()
    }

    fn width(&self) -> usize {
        1 + self.k_max + self.l_max
    }

    /// Design columns of model `index`: intercept, factors `1..=k`, lags `1..=l`.
    fn columns(&self, index: usize) -> Vec<usize> {
        let (k, l) = self.model(index);
        let mut cols = Vec::with_capacity(1 + k + l);
        cols.push(0);
        cols.extend(1..=k);
        cols.extend((0..l).map(|i| 1 + self.k_max + i));
        cols
    }

    /// Predictor-window rows consumed before the first usable regressor row.
    fn first_row(&self) -> usize {
        self.l_max.saturating_sub(1)
    }

    /// Observations required before a model's coefficients are trusted for
    /// the recursive error history.
    pub fn n_init(&self) -> usize {
        2 * self.width()
    }
}

/// Which forecast errors feed the precision estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorHistory {
    /// Expanding-window pseudo out-of-sample errors inside the window.
    #[default]
    Recursive,
    /// In-sample residuals of the full-window fit.
    InSample,
}

/// Inputs for one estimation window of length `m`.
#[derive(Debug, Clone, Copy)]
pub struct FarWindow<'a> {
    /// `m × N` predictors, rows in time order.
    pub x: &'a DMatrix<f64>,
    /// Lag series, length `m`.
    pub ylag: &'a [f64],
    /// Target dated `i + h` for row `i`, length `m − h`.
    pub target: &'a [f64],
    pub h: usize,
}

#[derive(Debug, Clone)]
pub struct FarOutput {
    /// Forecast of every model from the last window row.
    pub forecasts: DVector<f64>,
    /// `n_err × p` errors (realized minus forecast).
    pub errors: DMatrix<f64>,
    /// Models whose cross-product matrix needed the pseudo-inverse.
    pub rank_deficient: usize,
}

/// Column-standardized copy; constant columns become zero.
fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// `m × K` principal-component factors of the standardized predictor window.
pub fn window_factors(x: &DMatrix<f64>, k_max: usize) -> Result<DMatrix<f64>> {
    let m = x.nrows();
    if k_max == 0 {
        return Ok(DMatrix::zeros(m, 0));
    }
    let z = standardize(x);
    let panel = ErrorPanel::from_matrix(z)?;
    Ok(estimate_factors(&panel, k_max)?.factors)
}

fn design(spec: &FarSpec, g: &DMatrix<f64>, ylag: &[f64]) -> DMatrix<f64> {
    let m = ylag.len();
    let w = spec.width();
    let mut z = DMatrix::zeros(m, w);
    for i in spec.first_row()..m {
        z[(i, 0)] = 1.0;
        for c in 0..spec.k_max {
            z[(i, 1 + c)] = g[(i, c)];
        }
        for lag in 0..spec.l_max {
            z[(i, 1 + spec.k_max + lag)] = ylag[i - lag];
        }
    }
    z
}

/// Least squares on a principal submatrix of the shared cross-products;
/// falls back to the pseudo-inverse. Returns `(β, used_pinv)`.
fn solve_model(xtx: &DMatrix<f64>, xty: &DVector<f64>, cols: &[usize]) -> (DVector<f64>, bool) {
    let n = cols.len();
    let a = DMatrix::from_fn(n, n, |i, j| xtx[(cols[i], cols[j])]);
    let b = DVector::from_fn(n, |i, _| xty[cols[i]]);
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    if let Some(ch) = a.clone().cholesky() {
        // reject factorizations of numerically singular systems
        let l = ch.l_dirty();
        let dmin = (0..n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        if dmin * dmin > 1e-12 * scale {
            return (ch.solve(&b), false);
        }
    }
    let beta = a
        .svd(true, true)
        .solve(&b, 1e-12 * scale)
        .unwrap_or_else(|_| DVector::zeros(n));
    (beta, true)
}

fn row_forecast(z: &DMatrix<f64>, row: usize, cols: &[usize], beta: &DVector<f64>) -> f64 {
    cols.iter()
        .zip(beta.iter())
        .map(|(&c, b)| z[(row, c)] * b)
        .sum()
}

/// Fits every FAR(k, l) model on the window and returns the forecasts from
/// the last row together with an error history for combination weights.
pub fn fit_far_window(
    spec: &FarSpec,
    win: &FarWindow<'_>,
    history: ErrorHistory,
) -> Result<FarOutput> {
    let m = win.ylag.len();
    let h = win.h;
    if h == 0 {
        return Err(FgmError::InvalidParameter(
            "horizon must be at least 1".into(),
        ));
    }
    if win.x.nrows() != m || win.target.len() + h != m {
        return Err(FgmError::InvalidInput(format!(
            "window rows disagree: x has {}, lag series {m}, target {} with h = {h}",
            win.x.nrows(),
            win.target.len()
        )));
    }
    let first = spec.first_row();
    if m < first + spec.n_init() + 2 * h + 1
        || (spec.k_max > 0 && spec.k_max >= m.min(win.x.ncols()))
    {
        return Err(FgmError::Config(format!(
            "window of {m} rows is too short for K = {}, L = {} at h = {h}",
            spec.k_max, spec.l_max
        )));
    }
    let p = spec.n_models();
    let g = window_factors(win.x, spec.k_max)?;
    let z = design(spec, &g, win.ylag);
    let w = spec.width();
    let last_pair = m - 1 - h;
    let cols: Vec<Vec<usize>> = (0..p).map(|i| spec.columns(i)).collect();

    let mut xtx = DMatrix::zeros(w, w);
    let mut xty = DVector::zeros(w);
    let add_pair = |i: usize, xtx: &mut DMatrix<f64>, xty: &mut DVector<f64>| {
        let row = z.row(i);
        xtx.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
        xty.axpy(win.target[i], &row.transpose(), 1.0);
    };

    let mut rank_deficient = 0;
    let errors = match history {
        ErrorHistory::Recursive => {
            // origin s forecasts target[s] from pairs first..=s−h
            let s0 = first + spec.n_init() - 1 + h;
            let n_err = last_pair + 1 - s0;
            let mut errors = DMatrix::zeros(n_err, p);
            for i in first..=(s0 - h) {
                add_pair(i, &mut xtx, &mut xty);
            }
            for (r, s) in (s0..=last_pair).enumerate() {
                if r > 0 {
                    add_pair(s - h, &mut xtx, &mut xty);
                }
                for (mi, c) in cols.iter().enumerate() {
                    let (beta, pinv) = solve_model(&xtx, &xty, c);
                    if pinv {
                        rank_deficient += 1;
                    }
                    errors[(r, mi)] = win.target[s] - row_forecast(&z, s, c, &beta);
                }
            }
            // complete the cross-products with the remaining pairs
            for i in (last_pair + 1 - h)..=last_pair {
                add_pair(i, &mut xtx, &mut xty);
            }
            errors
        }
        ErrorHistory::InSample => {
            for i in first..=last_pair {
                add_pair(i, &mut xtx, &mut xty);
            }
            DMatrix::zeros(0, p)
        }
    };

    let mut forecasts = DVector::zeros(p);
    let mut insample = DMatrix::zeros(last_pair + 1 - first, p);
    for (mi, c) in cols.iter().enumerate() {
        let (beta, pinv) = solve_model(&xtx, &xty, c);
        if pinv {
            rank_deficient += 1;
        }
        forecasts[mi] = row_forecast(&z, m - 1, c, &beta);
        if history == ErrorHistory::InSample {
            for i in first..=last_pair {
                insample[(i - first, mi)] = win.target[i] - row_forecast(&z, i, c, &beta);
            }
        }
    }
    if rank_deficient > 0 {
        log::warn!("FAR: {rank_deficient} model fits used the pseudo-inverse");
    }
    Ok(FarOutput {
        forecasts,
        errors: if history == ErrorHistory::InSample {
            insample
        } else {
            errors
        },
        rank_deficient,
    })
}

/// One-step forecasts of all `(1+K)(1+L)` models from a window of predictors
/// and target values.
pub fn fit_far_models(
    x: &DMatrix<f64>,
    y: &[f64],
    k_max: usize,
    l_max: usize,
) -> Result<DVector<f64>> {
    let spec = FarSpec::new(k_max, l_max);
    let win = FarWindow {
        x,
        ylag: y,
        target: &y[1..],
        h: 1,
    };
    Ok(fit_far_window(&spec, &win, ErrorHistory::Recursive)?.forecasts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_window(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() - 0.5);
        let y = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
        (x, y)
    }

    #[test]
    fn model_counts() {
        assert_eq!(FarSpec::new(2, 7).n_models(), 24);
        assert_eq!(FarSpec::new(9, 11).n_models(), 120);
        let spec = FarSpec::new(2, 7);
        assert_eq!(spec.model(0), (0, 0));
        assert_eq!(spec.model(23), (2, 7));
        assert_eq!(spec.model_name(9), "far_k1_l1");
        assert_eq!(spec.columns(23), vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn exact_ar1_is_recovered() {
        let m = 40;
        let y: Vec<f64> = (0..m).map(|t| 0.7f64.powi(t as i32)).collect();
        let x = DMatrix::from_fn(m, 3, |i, j| ((i * (j + 2)) as f64).sin());
        let f = fit_far_models(&x, &y, 0, 1).unwrap();
        // model (0, 1) forecasts 0.7·y_{m−1}
        let want = 0.7 * y[m - 1];
        assert!(
            (f[1] - want).abs() < 1e-8 * y[m - 1].abs().max(1e-3),
            "{} vs {want}",
            f[1]
        );
        // intercept-only model forecasts the mean of the targets
        let mean = y[1..].iter().sum::<f64>() / (m - 1) as f64;
        assert!((f[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn recursive_errors_match_brute_force() {
        let (x, y) = random_window(60, 6, 3);
        let spec = FarSpec::new(1, 2);
        let h = 2;
        let target: Vec<f64> = y[h..].to_vec();
        let win = FarWindow {
            x: &x,
            ylag: &y,
            target: &target,
            h,
        };
        let out = fit_far_window(&spec, &win, ErrorHistory::Recursive).unwrap();
        let first = spec.first_row();
        let s0 = first + spec.n_init() - 1 + h;
        assert_eq!(out.errors.nrows(), 60 - 1 - h + 1 - s0);
        assert_eq!(out.errors.ncols(), 6);
        let g = window_factors(&x, 1).unwrap();
        let z = design(&spec, &g, &y);
        for (mi, s) in [(5usize, s0), (4, s0 + 7), (3, 60 - 1 - h)] {
            let c = spec.columns(mi);
            let rows: Vec<usize> = (first..=s - h).collect();
            let a = DMatrix::from_fn(rows.len(), c.len(), |r, k| z[(rows[r], c[k])]);
            let b = DVector::from_fn(rows.len(), |r, _| target[rows[r]]);
            let beta = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
            let fc = row_forecast(&z, s, &c, &beta);
            assert!((out.errors[(s - s0, mi)] - (target[s] - fc)).abs() < 1e-9);
        }
    }

    #[test]
    fn insample_residuals_are_orthogonal_to_intercept() {
        let (x, y) = random_window(50, 5, 4);
        let spec = FarSpec::new(2, 3);
        let win = FarWindow {
            x: &x,
            ylag: &y,
            target: &y[1..],
            h: 1,
        };
        let out = fit_far_window(&spec, &win, ErrorHistory::InSample).unwrap();
        assert_eq!(out.errors.nrows(), 50 - 1 - spec.first_row());
        for j in 0..spec.n_models() {
            assert!(out.errors.column(j).sum().abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_design_uses_pseudo_inverse() {
        let m = 40;
        let x = DMatrix::from_fn(m, 3, |i, j| ((i + j) as f64).cos());
        let y = vec![1.0; m];
        let f = fit_far_models(&x, &y, 0, 2).unwrap();
        assert!(f.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn short_window_is_a_config_error() {
        let (x, y) = random_window(20, 4, 5);
        assert!(matches!(
            fit_far_models(&x, &y, 2, 7),
            Err(FgmError::Config(_))
        ));
    }
}
