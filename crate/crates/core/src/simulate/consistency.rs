use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::results::{ExperimentResults, FailureRecord, ResultRecord};
use super::{
    gaussian_rows_from_precision, normal_vector, replication_rng, toeplitz_upper_cholesky, QMode,
};
use crate::combine::weight_error_report;
use crate::error::{FgmError, Result};
use crate::fgm::{estimate_precision, FactorCount, FgmOptions, Method};
use crate::matrix::{l1_operator_norm, spectral_norm_sym, MatrixRole, SymMatrix};
use crate::panel::ErrorPanel;
use crate::par;

/// Factor-plus-sparse-graph design for the estimation-error experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyDgp {
    pub rho: f64,
    pub phi_f: f64,
    pub sigma_zeta_sq: f64,
    pub u: f64,
    pub v: f64,
    pub kappa_grid: Vec<f64>,
    /// `p = ⌊T^delta⌋`.
    pub delta: f64,
    /// `π = 1/(p·T^graph_exponent)`.
    pub graph_exponent: f64,
    pub burn_in: usize,
}

impl Default for ConsistencyDgp {
    fn default() -> Self {
        Self {
            rho: 0.2,
            phi_f: 0.2,
            sigma_zeta_sq: 1.0,
            u: 0.1,
            v: 0.3,
            kappa_grid: vec![7.0, 7.5, 8.0, 8.5, 9.0, 9.5],
            delta: 0.85,
            graph_exponent: 0.8,
            burn_in: 200,
        }
    }
}

impl ConsistencyDgp {
    /// `T = round(2^κ)`.
    pub fn t_obs(kappa: f64) -> usize {
        2f64.powf(kappa).round() as usize
    }

    pub fn p(&self, t_obs: usize) -> usize {
        (t_obs as f64).powf(self.delta).floor() as usize
    }

    /// `q = ⌊2·√ln T⌋`.
    pub fn q(t_obs: usize) -> usize {
        (2.0 * (t_obs as f64).ln().sqrt()).floor() as usize
    }

    pub fn edge_probability(&self, p: usize, t_obs: usize) -> f64 {
        1.0 / (p as f64 * (t_obs as f64).powf(self.graph_exponent))
    }

    /// Stationary variance of each factor.
    pub fn factor_variance(&self) -> f64 {
        self.sigma_zeta_sq / (1.0 - self.phi_f * self.phi_f)
    }
}

/// Random-graph precision `A·v + (|τ| + 0.1 + u)·I`, `τ` the smallest
/// eigenvalue of `A·v`; off-diagonal edges are independent with probability `π`.
pub fn gen_random_graph_precision(
    p: usize,
    pi: f64,
    u: f64,
    v: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SymMatrix> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(FgmError::InvalidParameter(format!(
            "edge probability {pi} outside [0, 1]"
        )));
    }
    let mut a = DMatrix::zeros(p, p);
    for j in 1..p {
        for i in 0..j {
            if rng.random::<f64>() < pi {
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    let tau = if p == 0 {
        0.0
    } else {
        a.clone().symmetric_eigen().eigenvalues.min()
    };
    for i in 0..p {
        a[(i, i)] = tau.abs() + 0.1 + u;
    }
    SymMatrix::new(a, MatrixRole::Precision)
}

#[derive(Debug, Clone)]
pub struct ErrorPanelDraw {
    pub panel: ErrorPanel,
    pub theta_true: SymMatrix,
    pub sigma_true: SymMatrix,
    pub b_true: DMatrix<f64>,
    pub theta_eps: SymMatrix,
}

/// Draws a `T × p` error panel `e_t = B f_t + ε_t` with AR(1) factors.
/// `p` and `q` follow the design rules of `dgp`.
pub fn gen_error_panel(
    dgp: &ConsistencyDgp,
    t_obs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ErrorPanelDraw> {
    gen_error_panel_with(dgp, t_obs, dgp.p(t_obs), ConsistencyDgp::q(t_obs), rng)
}

/// As [`gen_error_panel`] with explicit dimensions.
pub fn gen_error_panel_with(
    dgp: &ConsistencyDgp,
    t_obs: usize,
    p: usize,
    q: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ErrorPanelDraw> {
    if q > p || p == 0 || t_obs < 2 {
        return Err(FgmError::InvalidParameter(format!(
            "need 0 ≤ q ≤ p, p ≥ 1, T ≥ 2; got q = {q}, p = {p}, T = {t_obs}"
        )));
    }
    if dgp.phi_f.abs() >= 1.0 {
        return Err(FgmError::InvalidParameter(
            "factor AR coefficient must satisfy |φ| < 1".into(),
        ));
    }
    let pi = dgp.edge_probability(p, t_obs).min(1.0);
    let theta_eps = gen_random_graph_precision(p, pi, dgp.u, dgp.v, rng)?;
    let b = toeplitz_upper_cholesky(p, dgp.rho)
        .columns(0, q)
        .into_owned();

    let sd = dgp.sigma_zeta_sq.sqrt();
    let mut f = nalgebra::DVector::zeros(q);
    let mut factors = DMatrix::zeros(t_obs, q);
    for t in 0..(dgp.burn_in + t_obs) {
        f = f * dgp.phi_f + normal_vector(rng, q) * sd;
        if t >= dgp.burn_in {
            factors.row_mut(t - dgp.burn_in).copy_from(&f.transpose());
        }
    }
    let chol = theta_eps
        .data()
        .clone()
        .cholesky()
        .ok_or_else(|| FgmError::Numeric("graph precision is not positive definite".into()))?;
    let eps = gaussian_rows_from_precision(&chol.l(), t_obs, rng);
    let values = &factors * b.transpose() + eps;

    let sigma_eps = chol.inverse();
    let sigma = &b * &b.transpose() * dgp.factor_variance() + sigma_eps;
    let sigma_true = SymMatrix::symmetrized(&sigma, MatrixRole::Covariance)?;
    let theta_true = sigma_true.inverse(MatrixRole::Precision)?;
    Ok(ErrorPanelDraw {
        panel: ErrorPanel::from_matrix(values)?,
        theta_true,
        sigma_true,
        b_true: b,
        theta_eps,
    })
}

#[derive(Debug, Clone)]
pub struct ConsistencySettings {
    pub dgp: ConsistencyDgp,
    pub methods: Vec<Method>,
    pub n_rep: usize,
    pub seed: u64,
    pub q_mode: QMode,
    pub fgm: FgmOptions,
}

impl Default for ConsistencySettings {
    fn default() -> Self {
        Self {
            dgp: ConsistencyDgp::default(),
            methods: Method::ALL.to_vec(),
            n_rep: 100,
            seed: 0,
            q_mode: QMode::Truth,
            fgm: FgmOptions::default(),
        }
    }
}

pub(crate) fn factor_count(mode: QMode, truth: usize) -> FactorCount {
    match mode {
        QMode::Truth => FactorCount::Fixed(truth),
        QMode::Auto => FactorCount::Auto,
        QMode::Fixed(q) => FactorCount::Fixed(q),
    }
}

/// Estimation and weight errors per `(method, T)` over replications.
/// Metrics: `op_norm_err`, `l1_op_norm_err`, `weight_l1_err`, `msfe_ratio_dev`.
pub fn run_consistency_experiment(settings: &ConsistencySettings) -> Result<ExperimentResults> {
    if settings.methods.is_empty() || settings.n_rep == 0 {
        return Err(FgmError::InvalidParameter(
            "need at least one method and one replication".into(),
        ));
    }
    let mut all = ExperimentResults::default();
    for (cell, &kappa) in settings.dgp.kappa_grid.iter().enumerate() {
        let t_obs = ConsistencyDgp::t_obs(kappa);
        let label = t_obs.to_string();
        let per_rep = par::map_range(settings.n_rep, |rep| {
            let mut out = ExperimentResults::default();
            let mut rng = replication_rng(settings.seed, cell, rep);
            let draw = match gen_error_panel(&settings.dgp, t_obs, &mut rng) {
                Ok(d) => d,
                Err(e) => {
                    for m in &settings.methods {
                        out.failures.push(FailureRecord {
                            method: m.name().into(),
                            t_or_param: label.clone(),
                            replication: rep,
                            message: e.to_string(),
                        });
                    }
                    return out;
                }
            };
            let q_true = draw.b_true.ncols();
            for &method in &settings.methods {
                let mut opts = settings.fgm.clone();
                opts.factors = factor_count(settings.q_mode, q_true);
                let metrics = estimate_precision(&draw.panel, method, &opts).and_then(|fit| {
                    let diff = fit.theta.data() - draw.theta_true.data();
                    let rep_w = weight_error_report(&fit.theta, &draw.theta_true)?;
                    Ok([
                        ("op_norm_err", spectral_norm_sym(&diff)),
                        ("l1_op_norm_err", l1_operator_norm(&diff)),
                        ("weight_l1_err", rep_w.l1_weight_err),
                        ("msfe_ratio_dev", rep_w.msfe_ratio_dev),
                    ])
                });
                match metrics {
                    Ok(ms) => {
                        out.records
                            .extend(ms.into_iter().map(|(metric, value)| ResultRecord {
                                experiment: "consistency".into(),
                                method: method.name().into(),
                                t_or_param: label.clone(),
                                replication: rep,
                                metric: metric.into(),
                                value,
                            }))
                    }
                    Err(e) => out.failures.push(FailureRecord {
                        method: method.name().into(),
                        t_or_param: label.clone(),
                        replication: rep,
                        message: e.to_string(),
                    }),
                }
            }
            out
        });
        for r in per_rep {
            all.extend(r);
        }
    }
    if !all.failures.is_empty() {
        log::warn!("{} fits failed and were excluded", all.failures.len());
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::relative_frobenius;
    use crate::panel::sample_covariance;
    use rand::SeedableRng;

    #[test]
    fn design_rules() {
        let d = ConsistencyDgp::default();
        assert_eq!(ConsistencyDgp::t_obs(7.0), 128);
        assert_eq!(ConsistencyDgp::t_obs(9.5), 724);
        assert_eq!(d.p(128), 61);
        assert_eq!(ConsistencyDgp::q(128), 4);
        let pi = d.edge_probability(61, 128);
        assert!(pi > 0.0 && pi < 1.0);
    }

    #[test]
    fn empty_graph_gives_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = gen_random_graph_precision(5, 0.0, 0.1, 0.3, &mut rng).unwrap();
        assert!((th.data() - DMatrix::identity(5, 5) * 0.2).amax() < 1e-15);
    }

    #[test]
    fn complete_pair_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = gen_random_graph_precision(2, 1.0, 0.1, 0.3, &mut rng).unwrap();
        assert!((th.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((th.get(0, 1) - 0.3).abs() < 1e-15);
        let mut ev = th.eigenvalues();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.2).abs() < 1e-12 && (ev[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_random_graph_precision(3, 1.5, 0.1, 0.3, &mut rng).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let d = ConsistencyDgp::default();
        let a = gen_error_panel(&d, 128, &mut replication_rng(5, 0, 0)).unwrap();
        let b = gen_error_panel(&d, 128, &mut replication_rng(5, 0, 0)).unwrap();
        assert_eq!(a.panel.values(), b.panel.values());
        assert_eq!(a.theta_true.data(), b.theta_true.data());
    }

    #[test]
    fn loadings_touch_only_leading_rows() {
        let d = ConsistencyDgp::default();
        let draw = gen_error_panel(&d, 128, &mut replication_rng(2, 0, 0)).unwrap();
        let b = &draw.b_true;
        assert_eq!(b.shape(), (61, 4));
        assert!(b.rows(4, 57).iter().all(|v| *v == 0.0));
        assert!((b[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_covariance_converges() {
        let d = ConsistencyDgp::default();
        let mut rng = replication_rng(3, 0, 0);
        let draw = gen_error_panel_with(&d, 1 << 14, 12, 2, &mut rng).unwrap();
        let s = sample_covariance(&draw.panel, false).unwrap();
        let err = relative_frobenius(s.data(), draw.sigma_true.data());
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn white_factors_leave_idiosyncratic_covariance() {
        let d = ConsistencyDgp {
            phi_f: 0.0,
            ..Default::default()
        };
        let mut rng = replication_rng(4, 0, 0);
        let draw = gen_error_panel_with(&d, 1 << 14, 6, 1, &mut rng).unwrap();
        let s = sample_covariance(&draw.panel, false).unwrap();
        let sigma_eps = draw.theta_eps.inverse(MatrixRole::Covariance).unwrap();
        // only the first series loads on the factor
        let mut want = sigma_eps.data().clone();
        want[(0, 0)] += 1.0;
        assert!(relative_frobenius(s.data(), &want) < 0.05);
    }

    #[test]
    fn factor_variance_is_stationary() {
        let d = ConsistencyDgp {
            phi_f: 0.6,
            ..Default::default()
        };
        let mut rng = replication_rng(6, 0, 0);
        let draw = gen_error_panel_with(&d, 1 << 15, 2, 1, &mut rng).unwrap();
        // first series: e = f + ε
        let var = draw.panel.values().column(0).norm_squared() / (1 << 15) as f64;
        let sigma_eps = draw.theta_eps.inverse(MatrixRole::Covariance).unwrap();
        let want = d.factor_variance() + sigma_eps.get(0, 0);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn smoke_ew_only() {
        let settings = ConsistencySettings {
            dgp: ConsistencyDgp {
                kappa_grid: vec![7.0],
                ..Default::default()
            },
            methods: vec![Method::EqualWeight],
            n_rep: 1,
            ..Default::default()
        };
        let res = run_consistency_experiment(&settings).unwrap();
        assert_eq!(res.records.len(), 4);
        assert!(res.failures.is_empty());
        assert!(res.mean("ew", "128", "op_norm_err").unwrap() > 0.0);
    }
}
