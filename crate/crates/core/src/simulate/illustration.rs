use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::results::{ExperimentResults, FailureRecord, ResultRecord};
use super::{replication_rng, toeplitz_upper_cholesky};
use crate::error::{FgmError, Result};
use crate::fgm::{estimate_precision, FactorCount, FgmOptions, Method};
use crate::matrix::{MatrixRole, SymMatrix};
use crate::panel::ErrorPanel;
use crate::par;

/// Weak-factor panel with AR(1)-correlated idiosyncratic errors, used to
/// contrast partial-correlation estimates with and without factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IllustrationDgp {
    pub t_obs: usize,
    pub p: usize,
    pub q: usize,
    /// `Σ_ε,ij = rho_eps^|i−j|`.
    pub rho_eps: f64,
    /// Factor variance (`f_t ~ N(0, factor_var·I)`).
    pub factor_var: f64,
    /// Loading variance (`b_j ~ N(0, loading_var·I)`).
    pub loading_var: f64,
}

impl Default for IllustrationDgp {
    fn default() -> Self {
        Self {
            t_obs: 1000,
            p: 50,
            q: 2,
            rho_eps: 0.4,
            factor_var: 0.1,
            loading_var: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IllustrationDraw {
    pub panel: ErrorPanel,
    pub loadings: DMatrix<f64>,
    pub sigma_true: SymMatrix,
    pub theta_true: SymMatrix,
}

pub fn gen_illustration_panel(
    dgp: &IllustrationDgp,
    rng: &mut ChaCha8Rng,
) -> Result<IllustrationDraw> {
    if dgp.p == 0 || dgp.t_obs < 2 || dgp.rho_eps.abs() >= 1.0 {
        return Err(FgmError::InvalidParameter(
            "need p ≥ 1, T ≥ 2 and |rho_eps| < 1".into(),
        ));
    }
    let (t, p, q) = (dgp.t_obs, dgp.p, dgp.q);
    let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    let b = DMatrix::from_fn(p, q, |_, _| normal(dgp.loading_var.sqrt()));
    let f = DMatrix::from_fn(t, q, |_, _| normal(dgp.factor_var.sqrt()));
    let z = DMatrix::from_fn(t, p, |_, _| normal(1.0));
    let u = toeplitz_upper_cholesky(p, dgp.rho_eps);
    let values = &f * b.transpose() + z * &u;
    let sigma_eps = u.transpose() * &u;
    let sigma = &b * b.transpose() * dgp.factor_var + sigma_eps;
    let sigma_true = SymMatrix::symmetrized(&sigma, MatrixRole::Covariance)?;
    let theta_true = sigma_true.inverse(MatrixRole::Precision)?;
    Ok(IllustrationDraw {
        panel: ErrorPanel::from_matrix(values)?,
        loadings: b,
        sigma_true,
        theta_true,
    })
}

/// Off-diagonal support agreement between an estimate and the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportScore {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Fraction of off-diagonal pairs estimated nonzero.
    pub density: f64,
}

/// Entries with magnitude above `tol` count as edges. With no edges on
/// either side the score is 1.
pub fn support_f1(estimate: &DMatrix<f64>, truth: &DMatrix<f64>, tol: f64) -> SupportScore {
    let p = estimate.nrows();
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for j in 1..p {
        for i in 0..j {
            let e = estimate[(i, j)].abs() > tol;
            let t = truth[(i, j)].abs() > tol;
            match (e, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let pairs = (p * p.saturating_sub(1) / 2).max(1) as f64;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let f1 = if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    SupportScore {
        f1,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        density: (tp + fp) as f64 / pairs,
    }
}

#[derive(Debug, Clone)]
pub struct IllustrationSettings {
    pub dgp: IllustrationDgp,
    pub n_rep: usize,
    pub seed: u64,
    /// Factor counts used by Factor GLASSO.
    pub q_hats: Vec<usize>,
    pub fgm: FgmOptions,
    /// Magnitude above which an entry counts as an edge.
    pub support_tol: f64,
}

impl Default for IllustrationSettings {
    fn default() -> Self {
        Self {
            dgp: IllustrationDgp::default(),
            n_rep: 20,
            seed: 0,
            q_hats: vec![1, 2, 3],
            fgm: FgmOptions::default(),
            support_tol: 1e-8,
        }
    }
}

/// Support recovery of plain GLASSO (`glasso`) and Factor GLASSO at each
/// `q̂` (`factor_glasso_q{q̂}`). Metrics: `support_f1`, `offdiag_density`.
pub fn run_illustration_experiment(settings: &IllustrationSettings) -> Result<ExperimentResults> {
    if settings.n_rep == 0 {
        return Err(FgmError::InvalidParameter(
            "need at least one replication".into(),
        ));
    }
    let label = format!("T={};p={}", settings.dgp.t_obs, settings.dgp.p);
    let mut fits: Vec<(String, Method, FactorCount)> =
        vec![("glasso".into(), Method::Glasso, FactorCount::Fixed(0))];
    fits.extend(settings.q_hats.iter().map(|&q| {
        (
            format!("factor_glasso_q{q}"),
            Method::FactorGlasso,
            FactorCount::Fixed(q),
        )
    }));
    let per_rep = par::map_range(settings.n_rep, |rep| {
        let mut out = ExperimentResults::default();
        let mut rng = replication_rng(settings.seed, 0, rep);
        let fail = |out: &mut ExperimentResults, name: &str, e: FgmError| {
            out.failures.push(FailureRecord {
                method: name.into(),
                t_or_param: label.clone(),
                replication: rep,
                message: e.to_string(),
            })
        };
        let draw = match gen_illustration_panel(&settings.dgp, &mut rng) {
            Ok(d) => d,
            Err(e) => {
                for (name, _, _) in &fits {
                    fail(&mut out, name, FgmError::Numeric(e.to_string()));
                }
                return out;
            }
        };
        for (name, method, count) in &fits {
            let mut opts = settings.fgm.clone();
            opts.factors = *count;
            match estimate_precision(&draw.panel, *method, &opts) {
                Ok(fit) => {
                    let s = support_f1(
                        fit.theta.data(),
                        draw.theta_true.data(),
                        settings.support_tol,
                    );
                    for (metric, value) in [("support_f1", s.f1), ("offdiag_density", s.density)] {
                        out.records.push(ResultRecord {
                            experiment: "illustration".into(),
                            method: name.clone(),
                            t_or_param: label.clone(),
                            replication: rep,
                            metric: metric.into(),
                            value,
                        });
                    }
                }
                Err(e) => fail(&mut out, name, e),
            }
        }
        out
    });
    let mut all = ExperimentResults::default();
    for r in per_rep {
        all.extend(r);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::replication_rng;

    #[test]
    fn f1_cases() {
        let truth = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 1.0]);
        assert_eq!(support_f1(&truth, &truth, 1e-8).f1, 1.0);
        let diag = DMatrix::<f64>::identity(3, 3);
        let s = support_f1(&diag, &truth, 1e-8);
        assert_eq!((s.f1, s.density), (0.0, 0.0));
        let dense = DMatrix::from_element(3, 3, 1.0);
        let s = support_f1(&dense, &truth, 1e-8);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        assert_eq!(support_f1(&diag, &diag, 1e-8).f1, 1.0);
    }

    #[test]
    fn population_precision_is_dense() {
        let draw =
            gen_illustration_panel(&IllustrationDgp::default(), &mut replication_rng(1, 0, 0))
                .unwrap();
        assert_eq!(draw.panel.values().shape(), (1000, 50));
        let s = support_f1(draw.theta_true.data(), draw.theta_true.data(), 1e-8);
        assert!(s.density > 0.9);
    }
}
