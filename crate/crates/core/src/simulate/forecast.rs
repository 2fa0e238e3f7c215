use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::consistency::factor_count;
use super::results::{ExperimentResults, FailureRecord, ResultRecord};
use super::{normal_vector, replication_rng, toeplitz_upper_cholesky, QMode};
use crate::combine::CombinationWeights;
use crate::error::{FgmError, Result};
use crate::far::{fit_far_window, ErrorHistory, FarSpec, FarWindow};
use crate::fgm::{combination_weights, FgmOptions, Method};
use crate::par;

/// Predictor factor model with a factor-driven target and MA(∞) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastDgp {
    /// Number of predictors.
    pub n: usize,
    /// Number of predictor factors.
    pub r: usize,
    pub sigma_v: f64,
    pub sigma_xi: f64,
    pub sigma_eps: f64,
    pub phi: f64,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    /// Factor coefficients of the target; drawn from `N(1, 1)` per dataset when absent.
    pub alpha: Option<Vec<f64>>,
    pub k_max: usize,
    pub l_max: usize,
    pub burn_in: usize,
    /// MA weights below this magnitude (past their peak) are dropped.
    pub ma_tol: f64,
}

impl Default for ForecastDgp {
    fn default() -> Self {
        Self {
            n: 100,
            r: 5,
            sigma_v: 1.0,
            sigma_xi: 1.0,
            sigma_eps: 1.0,
            phi: 0.8,
            rho: 0.9,
            c1: 0.0,
            c2: 0.9,
            alpha: None,
            k_max: 2,
            l_max: 7,
            burn_in: 200,
            ma_tol: 1e-10,
        }
    }
}

impl ForecastDgp {
    pub fn n_models(&self) -> usize {
        FarSpec::new(self.k_max, self.l_max).n_models()
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.c2) {
            return Err(FgmError::InvalidParameter(format!(
                "c2 = {} must lie in [0, 1)",
                self.c2
            )));
        }
        if self.phi.abs() >= 1.0 {
            return Err(FgmError::InvalidParameter(
                "factor AR coefficient must satisfy |φ| < 1".into(),
            ));
        }
        if self.r == 0 || self.r > self.n {
            return Err(FgmError::InvalidParameter(format!(
                "need 1 ≤ r ≤ N; got r = {}, N = {}",
                self.r, self.n
            )));
        }
        if let Some(a) = &self.alpha {
            if a.len() != self.r {
                return Err(FgmError::InvalidParameter(
                    "alpha must have r entries".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `θ_s = (1+s)^{c1}·c2^s` for `s = 1, 2, …`, truncated once the sequence
/// is decreasing and below `tol`.
pub fn ma_coefficients(c1: f64, c2: f64, tol: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&c2) {
        return Err(FgmError::InvalidParameter(format!(
            "c2 = {c2} must lie in [0, 1)"
        )));
    }
    if c2 == 0.0 {
        return Ok(Vec::new());
    }
    let peak = -c1 / c2.ln() - 1.0;
    let mut out = Vec::new();
    for s in 1..1_000_000usize {
        let theta = (1.0 + s as f64).powf(c1) * c2.powi(s as i32);
        if (s as f64) > peak && theta.abs() < tol {
            break;
        }
        out.push(theta);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ForecastData {
    /// `T × N` predictors.
    pub x: DMatrix<f64>,
    /// Target; `y[t]` loads on the factors dated `t − 1`.
    pub y: Vec<f64>,
    /// `T × r` true factors.
    pub g: DMatrix<f64>,
    pub alpha: Vec<f64>,
}

pub fn gen_forecast_data(
    dgp: &ForecastDgp,
    t_obs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ForecastData> {
    dgp.validate()?;
    let theta = ma_coefficients(dgp.c1, dgp.c2, dgp.ma_tol)?;
    let s_max = theta.len();
    let alpha: Vec<f64> = match &dgp.alpha {
        Some(a) => a.clone(),
        None => (0..dgp.r)
            .map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    // loadings: first r columns of the lower factor
    let lambda = toeplitz_upper_cholesky(dgp.n, dgp.rho)
        .rows(0, dgp.r)
        .transpose();

    let mut gcur = DVector::zeros(dgp.r);
    let mut gfull = DMatrix::zeros(t_obs + 1, dgp.r);
    for t in 0..(dgp.burn_in + t_obs + 1) {
        gcur = gcur * dgp.phi + normal_vector(rng, dgp.r) * dgp.sigma_xi;
        if t >= dgp.burn_in {
            gfull.row_mut(t - dgp.burn_in).copy_from(&gcur.transpose());
        }
    }
    let g = gfull.rows(1, t_obs).into_owned();
    let mut x = &g * lambda.transpose();
    for v in x.iter_mut() {
        *v += dgp.sigma_v * rng.sample::<f64, _>(StandardNormal);
    }
    let eps: Vec<f64> = (0..(t_obs + s_max))
        .map(|_| dgp.sigma_eps * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let alpha_v = DVector::from_column_slice(&alpha);
    let y = (0..t_obs)
        .map(|t| {
            let e = t + s_max;
            let ma: f64 = theta
                .iter()
                .enumerate()
                .map(|(i, th)| th * eps[e - 1 - i])
                .sum();
            gfull.row(t).dot(&alpha_v.transpose()) + ma + eps[e]
        })
        .collect();
    Ok(ForecastData { x, y, g, alpha })
}

/// Parameter swept across cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    C1,
    C2,
    Phi,
    Rho,
    Q,
    T,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "N",
            SweepParam::C1 => "c1",
            SweepParam::C2 => "c2",
            SweepParam::Phi => "phi",
            SweepParam::Rho => "rho",
            SweepParam::Q => "q",
            SweepParam::T => "T",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsfeCell {
    pub label: String,
    pub dgp: ForecastDgp,
    pub t_obs: usize,
    pub q_mode: QMode,
}

#[derive(Debug, Clone)]
pub struct MsfeSettings {
    pub cells: Vec<MsfeCell>,
    pub methods: Vec<Method>,
    pub n_rep: usize,
    pub seed: u64,
    pub history: ErrorHistory,
    /// Demean each error history before estimation.
    pub center_errors: bool,
    pub fgm: FgmOptions,
}

impl MsfeSettings {
    /// Cells over the `(c1, T)` grid with everything else from `base`.
    pub fn grid(base: &ForecastDgp, c1_grid: &[f64], t_grid: &[usize], q_mode: QMode) -> Self {
        let mut cells = Vec::new();
        for &c1 in c1_grid {
            for &t_obs in t_grid {
                cells.push(MsfeCell {
                    label: format!("c1={c1};T={t_obs}"),
                    dgp: ForecastDgp { c1, ..base.clone() },
                    t_obs,
                    q_mode,
                });
            }
        }
        Self::with_cells(cells)
    }

    /// One cell per value of `param`.
    pub fn sweep(
        base: &ForecastDgp,
        t_obs: usize,
        q_mode: QMode,
        param: SweepParam,
        values: &[f64],
    ) -> Result<Self> {
        let mut cells = Vec::new();
        for &v in values {
            let mut dgp = base.clone();
            let mut t = t_obs;
            let mut q = q_mode;
            let as_count = || -> Result<usize> {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(FgmError::InvalidParameter(format!(
                        "{} must be a whole number, got {v}",
                        param.name()
                    )));
                }
                Ok(v as usize)
            };
            match param {
                SweepParam::N => dgp.n = as_count()?,
                SweepParam::C1 => dgp.c1 = v,
                SweepParam::C2 => dgp.c2 = v,
                SweepParam::Phi => dgp.phi = v,
                SweepParam::Rho => dgp.rho = v,
                SweepParam::Q => q = QMode::Fixed(as_count()?),
                SweepParam::T => t = as_count()?,
            }
            cells.push(MsfeCell {
                label: format!("{}={v}", param.name()),
                dgp,
                t_obs: t,
                q_mode: q,
            });
        }
        Ok(Self::with_cells(cells))
    }

    fn with_cells(cells: Vec<MsfeCell>) -> Self {
        Self {
            cells,
            methods: Method::ALL.to_vec(),
            n_rep: 100,
            seed: 0,
            history: ErrorHistory::Recursive,
            center_errors: false,
            fgm: FgmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MsfeReplication {
    /// Realized target at each origin.
    pub realized: Vec<f64>,
    /// `n × p` model forecasts.
    pub model_forecasts: DMatrix<f64>,
    /// Combined forecasts per method, in `methods` order.
    pub combined: Vec<Vec<f64>>,
    /// Origins where a method fell back to equal weights.
    pub fallbacks: Vec<usize>,
}

impl MsfeReplication {
    pub fn msfe(&self, method_index: usize) -> f64 {
        let n = self.realized.len() as f64;
        self.realized
            .iter()
            .zip(&self.combined[method_index])
            .map(|(y, f)| (y - f).powi(2))
            .sum::<f64>()
            / n
    }
}

/// One replication: rolling FAR forecasts over the second half of a fresh
/// sample, combined by every method.
pub fn msfe_replication(
    cell: &MsfeCell,
    methods: &[Method],
    opts: &FgmOptions,
    history: ErrorHistory,
    center: bool,
    rng: &mut ChaCha8Rng,
) -> Result<MsfeReplication> {
    let data = gen_forecast_data(&cell.dgp, cell.t_obs, rng)?;
    let t_obs = cell.t_obs;
    let m = t_obs / 2;
    let spec = FarSpec::new(cell.dgp.k_max, cell.dgp.l_max);
    let p = spec.n_models();
    let origins: Vec<usize> = (m - 1..=t_obs - 2).collect();
    let n = origins.len();
    let mut realized = Vec::with_capacity(n);
    let mut model_forecasts = DMatrix::zeros(n, p);
    let mut combined = vec![Vec::with_capacity(n); methods.len()];
    let mut fallbacks = vec![0; methods.len()];
    for (r, &t) in origins.iter().enumerate() {
        let w0 = t + 1 - m;
        let x = data.x.rows(w0, m).into_owned();
        let ylag = &data.y[w0..=t];
        let target = &data.y[w0 + 1..=t];
        let out = fit_far_window(
            &spec,
            &FarWindow {
                x: &x,
                ylag,
                target,
                h: 1,
            },
            history,
        )?;
        realized.push(data.y[t + 1]);
        model_forecasts
            .row_mut(r)
            .copy_from(&out.forecasts.transpose());
        let mut o = opts.clone();
        o.factors = factor_count(cell.q_mode, cell.dgp.r).capped(out.errors.nrows(), p);
        for (mi, &method) in methods.iter().enumerate() {
            let w = match combination_weights(&out.errors, method, &o, center) {
                Ok((w, _)) => w,
                Err(e) => {
                    log::debug!("{method} at origin {t}: {e}; using equal weights");
                    fallbacks[mi] += 1;
                    CombinationWeights::equal(p)
                }
            };
            combined[mi].push(w.as_vector().dot(&out.forecasts));
        }
    }
    Ok(MsfeReplication {
        realized,
        model_forecasts,
        combined,
        fallbacks,
    })
}

/// Realized MSFE of every method per cell and replication.
/// Metrics: `msfe` and `fallbacks` (origins that used equal weights).
pub fn run_msfe_experiment(settings: &MsfeSettings) -> Result<ExperimentResults> {
    if settings.methods.is_empty() || settings.n_rep == 0 {
        return Err(FgmError::InvalidParameter(
            "need at least one method and one replication".into(),
        ));
    }
    for cell in &settings.cells {
        cell.dgp.validate()?;
        if cell.t_obs < 4 {
            return Err(FgmError::InvalidParameter(format!(
                "T = {} is too small",
                cell.t_obs
            )));
        }
    }
    let mut all = ExperimentResults::default();
    for (ci, cell) in settings.cells.iter().enumerate() {
        let per_rep = par::map_range(settings.n_rep, |rep| {
            let mut rng = replication_rng(settings.seed, ci, rep);
            let mut out = ExperimentResults::default();
            match msfe_replication(
                cell,
                &settings.methods,
                &settings.fgm,
                settings.history,
                settings.center_errors,
                &mut rng,
            ) {
                Ok(run) => {
                    for (mi, method) in settings.methods.iter().enumerate() {
                        for (metric, value) in [
                            ("msfe", run.msfe(mi)),
                            ("fallbacks", run.fallbacks[mi] as f64),
                        ] {
                            out.records.push(ResultRecord {
                                experiment: "msfe".into(),
                                method: method.name().into(),
                                t_or_param: cell.label.clone(),
                                replication: rep,
                                metric: metric.into(),
                                value,
                            });
                        }
                    }
                }
                Err(e) => {
                    for method in &settings.methods {
                        out.failures.push(FailureRecord {
                            method: method.name().into(),
                            t_or_param: cell.label.clone(),
                            replication: rep,
                            message: e.to_string(),
                        });
                    }
                }
            }
            out
        });
        for r in per_rep {
            all.extend(r);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ma_rule_arithmetic() {
        let th = ma_coefficients(0.0, 0.6, 1e-10).unwrap();
        assert!((th[0] - 0.6).abs() < 1e-15 && (th[1] - 0.36).abs() < 1e-15);
        assert!(th.last().unwrap().abs() >= 1e-10);
        let th = ma_coefficients(0.75, 0.9, 1e-10).unwrap();
        assert!((th[0] - 2f64.powf(0.75) * 0.9).abs() < 1e-12);
        assert!((th[0] - 1.5134).abs() < 5e-4);
        assert!(th.len() > 100);
        assert!(ma_coefficients(0.0, 1.0, 1e-10).is_err());
        assert!(ma_coefficients(0.0, 0.0, 1e-10).unwrap().is_empty());
    }

    #[test]
    fn white_noise_target() {
        let dgp = ForecastDgp {
            alpha: Some(vec![0.0; 5]),
            c2: 0.0,
            sigma_eps: 2.0,
            ..Default::default()
        };
        let mut rng = replication_rng(1, 0, 0);
        let d = gen_forecast_data(&dgp, 20000, &mut rng).unwrap();
        let n = d.y.len() as f64;
        let mean = d.y.iter().sum::<f64>() / n;
        let var = d.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(
            mean.abs() < 0.05 && (var / 4.0 - 1.0).abs() < 0.05,
            "{mean} {var}"
        );
        let lag1 =
            d.y.windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum::<f64>()
                / n;
        assert!(lag1.abs() / var < 0.03);
    }

    #[test]
    fn target_follows_lagged_factors() {
        let dgp = ForecastDgp {
            alpha: Some(vec![1.0, 0.0, 0.0, 0.0, 0.0]),
            c2: 0.0,
            sigma_eps: 1e-9,
            ..Default::default()
        };
        let d = gen_forecast_data(&dgp, 50, &mut replication_rng(2, 0, 0)).unwrap();
        for t in 1..50 {
            assert!((d.y[t] - d.g[(t - 1, 0)]).abs() < 1e-7);
        }
        assert_eq!(d.x.shape(), (50, 100));
    }

    #[test]
    fn deterministic_given_seed() {
        let dgp = ForecastDgp::default();
        let a = gen_forecast_data(&dgp, 60, &mut replication_rng(9, 1, 2)).unwrap();
        let b = gen_forecast_data(&dgp, 60, &mut replication_rng(9, 1, 2)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    fn small_cell(k_max: usize, l_max: usize) -> MsfeCell {
        MsfeCell {
            label: "t".into(),
            dgp: ForecastDgp {
                n: 20,
                k_max,
                l_max,
                ..Default::default()
            },
            t_obs: 120,
            q_mode: QMode::Fixed(2),
        }
    }

    #[test]
    fn single_model_makes_methods_identical() {
        let cell = small_cell(0, 0);
        let run = msfe_replication(
            &cell,
            &Method::ALL,
            &FgmOptions::default(),
            ErrorHistory::Recursive,
            false,
            &mut replication_rng(3, 0, 0),
        )
        .unwrap();
        let first = run.msfe(0);
        for mi in 1..5 {
            assert_eq!(run.msfe(mi), first);
        }
    }

    #[test]
    fn equal_weight_is_the_forecast_average() {
        let cell = small_cell(1, 2);
        let run = msfe_replication(
            &cell,
            &[Method::EqualWeight],
            &FgmOptions::default(),
            ErrorHistory::Recursive,
            false,
            &mut replication_rng(4, 0, 0),
        )
        .unwrap();
        let n = run.realized.len();
        assert_eq!(n, 60);
        let p = run.model_forecasts.ncols() as f64;
        let direct: f64 = (0..n)
            .map(|i| (run.realized[i] - run.model_forecasts.row(i).sum() / p).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((run.msfe(0) - direct).abs() < 1e-12);
    }

    #[test]
    fn grid_and_sweep_cells() {
        let base = ForecastDgp::default();
        let s = MsfeSettings::grid(&base, &[0.0, 0.75], &[400, 800], QMode::Fixed(5));
        assert_eq!(s.cells.len(), 4);
        assert_eq!(s.cells[3].label, "c1=0.75;T=800");
        assert_eq!(s.cells[3].dgp.c1, 0.75);
        let s =
            MsfeSettings::sweep(&base, 800, QMode::Fixed(5), SweepParam::Q, &[0.0, 3.0]).unwrap();
        assert_eq!(s.cells[1].q_mode, QMode::Fixed(3));
        assert!(MsfeSettings::sweep(&base, 800, QMode::Auto, SweepParam::N, &[1.5]).is_err());
    }

    #[test]
    fn experiment_records_every_method() {
        let mut s = MsfeSettings::grid(
            &ForecastDgp {
                n: 20,
                k_max: 1,
                l_max: 2,
                ..Default::default()
            },
            &[0.0],
            &[100],
            QMode::Fixed(1),
        );
        s.n_rep = 2;
        let res = run_msfe_experiment(&s).unwrap();
        assert!(res.failures.is_empty());
        for m in Method::ALL {
            assert!(res.mean(m.name(), "c1=0;T=100", "msfe").unwrap() > 0.0);
        }
    }
}
