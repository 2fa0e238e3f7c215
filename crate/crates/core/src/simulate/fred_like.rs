use chrono::{Months, NaiveDate};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::forecast::ma_coefficients;
use crate::data::DataTable;
use crate::error::{FgmError, Result};

/// Monthly synthetic panel in the FRED-MD layout: a level target plus
/// predictors driven by common AR(1) factors and stored as levels whose
/// transform codes undo the integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FredLikeSpec {
    pub t_obs: usize,
    pub n_predictors: usize,
    pub r: usize,
    pub phi: f64,
    /// Idiosyncratic share of predictor variance.
    pub noise_sd: f64,
    pub target_name: String,
    /// Mean monthly log growth of the target.
    pub drift: f64,
    /// Scale of the factor-driven part of target growth.
    pub signal: f64,
    /// Scale of the MA noise in target growth.
    pub noise: f64,
    pub c2: f64,
    /// Series starting this many rows late; they carry missing leading cells.
    pub late_starters: usize,
    pub start: NaiveDate,
    pub burn_in: usize,
}

impl Default for FredLikeSpec {
    fn default() -> Self {
        Self {
            t_obs: 300,
            n_predictors: 126,
            r: 4,
            phi: 0.7,
            noise_sd: 1.0,
            target_name: "INDPRO".into(),
            drift: 0.002,
            signal: 0.004,
            noise: 0.006,
            c2: 0.5,
            late_starters: 3,
            start: NaiveDate::from_ymd_opt(1960, 1, 1).expect("valid date"),
            burn_in: 200,
        }
    }
}

const CODE_CYCLE: [u8; 8] = [5, 2, 5, 1, 6, 5, 4, 2];

pub fn gen_fred_like(spec: &FredLikeSpec, rng: &mut ChaCha8Rng) -> Result<DataTable> {
    if spec.t_obs < 10
        || spec.r == 0
        || spec.phi.abs() >= 1.0
        || spec.late_starters > spec.n_predictors
    {
        return Err(FgmError::InvalidParameter(
            "invalid synthetic panel settings".into(),
        ));
    }
    let (t, n, r) = (spec.t_obs, spec.n_predictors, spec.r);
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    let mut g = DMatrix::zeros(t + 1, r);
    let mut cur = vec![0.0; r];
    for step in 0..(spec.burn_in + t + 1) {
        for c in cur.iter_mut() {
            *c = spec.phi * *c + normal(rng);
        }
        if step >= spec.burn_in {
            for (k, c) in cur.iter().enumerate() {
                g[(step - spec.burn_in, k)] = *c;
            }
        }
    }
    // predictor row t uses g row t+1, the target's drivers row t
    let loadings = DMatrix::from_fn(n, r, |_, _| normal(rng));
    let mut stationary = g.rows(1, t) * loadings.transpose();
    for v in stationary.iter_mut() {
        *v = (*v + spec.noise_sd * normal(rng)) / (r as f64).sqrt();
    }

    let mut names = vec![spec.target_name.clone()];
    let mut codes = vec![5u8];
    let mut columns = Vec::with_capacity(n + 1);

    let alpha: Vec<f64> = (0..r).map(|_| 1.0 + normal(rng)).collect();
    let theta = ma_coefficients(0.0, spec.c2, 1e-10)?;
    let eps: Vec<f64> = (0..(t + theta.len())).map(|_| normal(rng)).collect();
    let mut log_level = 100f64.ln();
    let mut target = Vec::with_capacity(t);
    for i in 0..t {
        let e = i + theta.len();
        let ma: f64 = theta
            .iter()
            .enumerate()
            .map(|(s, th)| th * eps[e - 1 - s])
            .sum();
        let drive: f64 = (0..r).map(|k| alpha[k] * g[(i, k)]).sum::<f64>() / (r as f64).sqrt();
        log_level += spec.drift + spec.signal * drive + spec.noise * (ma + eps[e]);
        target.push(Some(log_level.exp()));
    }
    columns.push(target);

    for j in 0..n {
        let code = CODE_CYCLE[j % CODE_CYCLE.len()];
        let x = stationary.column(j);
        let mut level = Vec::with_capacity(t);
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..t {
            let v = match code {
                1 => x[i],
                2 => {
                    a += x[i];
                    100.0 + a
                }
                4 => (0.1 * x[i]).exp(),
                5 => {
                    a += 0.01 * x[i];
                    100.0 * a.exp()
                }
                6 => {
                    a += 0.001 * x[i];
                    b += a;
                    100.0 * b.exp()
                }
                _ => unreachable!("code cycle holds supported codes"),
            };
            level.push(Some(v));
        }
        if j >= n - spec.late_starters {
            let late = 12 * (1 + j % 3);
            for cell in level.iter_mut().take(late.min(t)) {
                *cell = None;
            }
        }
        names.push(format!("X{:03}", j + 1));
        codes.push(code);
        columns.push(level);
    }

    let dates = (0..t)
        .map(|i| {
            spec.start
                .checked_add_months(Months::new(i as u32))
                .ok_or_else(|| FgmError::InvalidParameter("date range overflow".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DataTable {
        dates,
        names,
        tcodes: Some(codes),
        columns,
    })
}
