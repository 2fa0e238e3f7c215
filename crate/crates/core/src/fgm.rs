//! Factor graphical models: PCA factor removal, a sparse precision estimate of
//! the residuals, and Sherman-Morrison-Woodbury recombination.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::combine::{equal_weight_precision, optimal_weights, CombinationWeights};
use crate::error::{FgmError, Result};
use crate::factor::{estimate_factors, ic1_scores, FactorDecomposition};
use crate::glasso::{glasso_fit, GlassoOptions};
use crate::matrix::{MatrixRole, SymMatrix};
use crate::nodewise::{nodewise_fit, NodewiseOptions, NodewisePenalty};
use crate::panel::{sample_covariance, ErrorPanel};
use crate::tuning::{ebic_select, glasso_lambda_max, GridSpec, PathMode, PenaltyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "ew", alias = "equal_weight")]
    EqualWeight,
    Glasso,
    Mb,
    FactorGlasso,
    FactorMb,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::EqualWeight,
        Method::Glasso,
        Method::Mb,
        Method::FactorGlasso,
        Method::FactorMb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::EqualWeight => "ew",
            Method::Glasso => "glasso",
            Method::Mb => "mb",
            Method::FactorGlasso => "factor_glasso",
            Method::FactorMb => "factor_mb",
        }
    }

    pub fn uses_factors(self) -> bool {
        matches!(self, Method::FactorGlasso | Method::FactorMb)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FgmError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match key.as_str() {
            "ew" | "equal_weight" | "equal" => Ok(Method::EqualWeight),
            "glasso" => Ok(Method::Glasso),
            "mb" | "nodewise" => Ok(Method::Mb),
            "factor_glasso" | "fglasso" => Ok(Method::FactorGlasso),
            "factor_mb" | "fmb" => Ok(Method::FactorMb),
            _ => Err(FgmError::InvalidParameter(format!(
                "unknown method `{s}` (expected ew, glasso, mb, factor_glasso or factor_mb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorCount {
    Fixed(usize),
    /// IC1 over `1..=min(q_max, p−1, T−1)`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlassoPenalty {
    Fixed(f64),
    Ebic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgmOptions {
    pub factors: FactorCount,
    pub q_max: usize,
    pub glasso_penalty: GlassoPenalty,
    pub grid: GridSpec,
    pub eta: f64,
    pub nodewise_penalty: NodewisePenalty,
    pub glasso: GlassoOptions,
    pub nodewise: NodewiseOptions,
    pub path_mode: PathMode,
    /// Subtract column means before estimating.
    pub demean: bool,
}

impl Default for FgmOptions {
    fn default() -> Self {
        Self {
            factors: FactorCount::Auto,
            q_max: 8,
            glasso_penalty: GlassoPenalty::Ebic,
            grid: GridSpec::default(),
            eta: 1.0,
            nodewise_penalty: NodewisePenalty::Gic(GridSpec::default()),
            glasso: GlassoOptions::default(),
            nodewise: NodewiseOptions::default(),
            path_mode: PathMode::Sequential,
            demean: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub q: usize,
    /// IC1 for `q = 1..`, present when the factor count was selected.
    pub ic1_scores: Option<Vec<f64>>,
    pub glasso_lambda: Option<f64>,
    pub ebic_grid: Option<Vec<f64>>,
    pub ebic_scores: Option<Vec<f64>>,
    pub glasso_converged: Option<bool>,
    pub nodewise_lambdas: Option<Vec<f64>>,
    pub nodewise_repaired: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct FgmFit {
    pub theta: SymMatrix,
    pub theta_eps: SymMatrix,
    pub theta_f: SymMatrix,
    pub decomposition: FactorDecomposition,
    pub method: Method,
    pub tuning: TuningReport,
}

/// `Θ = Θε − ΘεB[Θf + B'ΘεB]⁻¹B'Θε`, symmetrized as `(M + M')/2`.
pub fn smw_recombine(
    theta_eps: &SymMatrix,
    theta_f: &SymMatrix,
    loadings: &DMatrix<f64>,
) -> Result<SymMatrix> {
    let (p, q) = loadings.shape();
    if theta_eps.dim() != p || theta_f.dim() != q {
        return Err(FgmError::InvalidInput(format!(
            "dimension mismatch: Θε is {0}x{0}, Θf is {1}x{1}, B is {p}x{q}",
            theta_eps.dim(),
            theta_f.dim()
        )));
    }
    if q == 0 {
        return Ok(theta_eps.clone());
    }
    let tb = theta_eps.data() * loadings;
    let inner = theta_f.data() + loadings.tr_mul(&tb);
    let inner = (&inner + inner.transpose()) * 0.5;
    let chol = inner.cholesky().ok_or_else(|| {
        FgmError::Numeric("inner matrix Θf + B'ΘεB is not positive definite".into())
    })?;
    let m = theta_eps.data() - &tb * chol.solve(&tb.transpose());
    Ok(SymMatrix::symmetrized(&m, MatrixRole::Precision)?.verify_pd())
}

fn prepared(panel: &ErrorPanel, opts: &FgmOptions) -> ErrorPanel {
    if opts.demean {
        panel.centered()
    } else {
        panel.clone()
    }
}

fn decompose(
    panel: &ErrorPanel,
    factors: FactorCount,
    q_max: usize,
    report: &mut TuningReport,
) -> Result<FactorDecomposition> {
    let (t, p) = (panel.n_obs(), panel.n_models());
    let q = match factors {
        FactorCount::Fixed(q) => q,
        FactorCount::Auto => {
            let cap = q_max.min(p - 1).min(t - 1);
            if cap == 0 {
                return Err(FgmError::InvalidParameter(
                    "q_max must be at least 1".into(),
                ));
            }
            let scores = ic1_scores(panel, cap)?;
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s < scores[best] {
                    best = i;
                }
            }
            report.ic1_scores = Some(scores);
            best + 1
        }
    };
    report.q = q;
    if q == 0 {
        FactorDecomposition::trivial(panel)
    } else {
        estimate_factors(panel, q)
    }
}

fn factor_precision(d: &FactorDecomposition) -> Result<SymMatrix> {
    if d.q == 0 {
        SymMatrix::new(DMatrix::zeros(0, 0), MatrixRole::Precision)
    } else {
        d.sigma_f.inverse(MatrixRole::Precision)
    }
}

fn finish(
    method: Method,
    d: FactorDecomposition,
    theta_eps: SymMatrix,
    tuning: TuningReport,
) -> Result<FgmFit> {
    let theta_f = factor_precision(&d)?;
    let theta = smw_recombine(&theta_eps, &theta_f, &d.loadings)?;
    Ok(FgmFit {
        theta,
        theta_eps,
        theta_f,
        decomposition: d,
        method,
        tuning,
    })
}

fn glasso_step(
    s: &SymMatrix,
    t_obs: usize,
    opts: &FgmOptions,
    report: &mut TuningReport,
) -> Result<SymMatrix> {
    let fit = match opts.glasso_penalty {
        GlassoPenalty::Fixed(lambda) => {
            let fit = glasso_fit(s, lambda, true, &opts.glasso)?;
            if !fit.converged {
                log::warn!("graphical lasso did not converge at λ = {lambda}");
            }
            fit
        }
        GlassoPenalty::Ebic => {
            let grid = PenaltyGrid::log_spaced(glasso_lambda_max(s, true), opts.grid)?;
            let sel = ebic_select(
                s,
                &grid,
                opts.eta,
                t_obs,
                true,
                &opts.glasso,
                opts.path_mode,
            )?;
            report.ebic_grid = Some(grid.values().to_vec());
            report.ebic_scores = Some(sel.scores);
            sel.fit
        }
    };
    report.glasso_lambda = Some(fit.lambda);
    report.glasso_converged = Some(fit.converged);
    Ok(fit.theta)
}

/// Weighted graphical lasso on the residual covariance, recombined with the
/// factor layer. `q = 0` is plain weighted graphical lasso on the panel.
pub fn factor_glasso(panel: &ErrorPanel, opts: &FgmOptions) -> Result<FgmFit> {
    let panel = prepared(panel, opts);
    let mut report = TuningReport::default();
    let d = decompose(&panel, opts.factors, opts.q_max, &mut report)?;
    let theta_eps = glasso_step(&d.sigma_eps, panel.n_obs(), opts, &mut report)?;
    let method = if d.q == 0 {
        Method::Glasso
    } else {
        Method::FactorGlasso
    };
    finish(method, d, theta_eps, report)
}

/// Nodewise regression on the residual panel, recombined with the factor layer.
pub fn factor_mb(panel: &ErrorPanel, opts: &FgmOptions) -> Result<FgmFit> {
    let panel = prepared(panel, opts);
    let mut report = TuningReport::default();
    let d = decompose(&panel, opts.factors, opts.q_max, &mut report)?;
    let resid = panel.with_values(d.residuals.clone())?;
    let nw = nodewise_fit(&resid, &opts.nodewise_penalty, &opts.nodewise)?;
    report.nodewise_lambdas = Some(nw.lambdas.iter().copied().collect());
    report.nodewise_repaired = Some(nw.repaired);
    let method = if d.q == 0 {
        Method::Mb
    } else {
        Method::FactorMb
    };
    finish(method, d, nw.theta, report)
}

/// Precision estimate of the forecast errors for any supported method.
pub fn estimate_precision(panel: &ErrorPanel, method: Method, opts: &FgmOptions) -> Result<FgmFit> {
    let mut o = opts.clone();
    match method {
        Method::EqualWeight => {
            let panel = prepared(panel, opts);
            let s = sample_covariance(&panel, false)?;
            let theta = equal_weight_precision(&s)?;
            finish(
                method,
                FactorDecomposition::trivial(&panel)?,
                theta,
                TuningReport::default(),
            )
        }
        Method::Glasso => {
            o.factors = FactorCount::Fixed(0);
            factor_glasso(panel, &o)
        }
        Method::Mb => {
            o.factors = FactorCount::Fixed(0);
            factor_mb(panel, &o)
        }
        Method::FactorGlasso => factor_glasso(panel, opts),
        Method::FactorMb => factor_mb(panel, opts),
    }
}

impl FactorCount {
    /// Caps a fixed count to what an `n × p` panel supports.
    pub fn capped(self, n: usize, p: usize) -> FactorCount {
        match self {
            FactorCount::Fixed(q) => {
                FactorCount::Fixed(q.min(p.saturating_sub(1)).min(n.saturating_sub(1)))
            }
            FactorCount::Auto => FactorCount::Auto,
        }
    }
}

/// Combination weights from a `n × p` error history. Equal weights need no
/// estimate; a single model gets weight one.
pub fn combination_weights(
    errors: &DMatrix<f64>,
    method: Method,
    opts: &FgmOptions,
    center: bool,
) -> Result<(CombinationWeights, Option<TuningReport>)> {
    let p = errors.ncols();
    if p == 1 {
        return Ok((CombinationWeights::equal(1), None));
    }
    if method == Method::EqualWeight {
        return Ok((CombinationWeights::equal(p), None));
    }
    let mut panel = ErrorPanel::from_matrix(errors.clone())?;
    if center {
        panel = panel.centered();
    }
    let fit = estimate_precision(&panel, method, opts)?;
    Ok((optimal_weights(&fit.theta)?, Some(fit.tuning)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::relative_frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_pd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(p, p) * 0.3
    }

    fn prec(m: DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(&m, MatrixRole::Precision).unwrap()
    }

    fn dense_oracle(te: &DMatrix<f64>, tf: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let cov = b * tf.clone().try_inverse().unwrap() * b.transpose()
            + te.clone().try_inverse().unwrap();
        cov.try_inverse().unwrap()
    }

    #[test]
    fn zero_loadings_return_theta_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let te = prec(random_pd(4, &mut rng));
        let tf = prec(random_pd(2, &mut rng));
        let out = smw_recombine(&te, &tf, &DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(out.data(), te.data());
    }

    #[test]
    fn single_factor_hand_case() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let out = smw_recombine(
            &SymMatrix::identity(3, MatrixRole::Precision),
            &SymMatrix::identity(1, MatrixRole::Precision),
            &b,
        )
        .unwrap();
        let mut expect = DMatrix::identity(3, 3);
        expect[(0, 0)] = 0.5;
        assert!((out.data() - expect).amax() < 1e-15);
    }

    #[test]
    fn random_instance_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let te = random_pd(6, &mut rng);
        let tf = random_pd(2, &mut rng);
        let b = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let out = smw_recombine(&prec(te.clone()), &prec(tf.clone()), &b).unwrap();
        assert!(relative_frobenius(out.data(), &dense_oracle(&te, &tf, &b)) < 1e-8);
        assert!(out.is_verified_pd());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let out = smw_recombine(
            &SymMatrix::identity(3, MatrixRole::Precision),
            &SymMatrix::identity(2, MatrixRole::Precision),
            &DMatrix::zeros(3, 1),
        );
        assert!(matches!(out, Err(FgmError::InvalidInput(_))));
    }

    fn panel(t: usize, p: usize, seed: u64) -> ErrorPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ErrorPanel::from_matrix(DMatrix::from_fn(t, p, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    #[test]
    fn q_zero_is_plain_glasso() {
        let e = panel(60, 5, 3);
        let opts = FgmOptions {
            factors: FactorCount::Fixed(0),
            glasso_penalty: GlassoPenalty::Fixed(0.1),
            ..Default::default()
        };
        let fit = factor_glasso(&e, &opts).unwrap();
        let s = sample_covariance(&e, false).unwrap();
        let direct = glasso_fit(&s, 0.1, true, &opts.glasso).unwrap();
        assert_eq!(fit.theta.data(), direct.theta.data());
        assert_eq!(fit.method, Method::Glasso);
        let g = estimate_precision(&e, Method::Glasso, &opts).unwrap();
        assert_eq!(g.theta.data(), direct.theta.data());
    }

    #[test]
    fn q_zero_is_plain_nodewise() {
        let e = panel(60, 5, 4);
        let opts = FgmOptions {
            factors: FactorCount::Fixed(0),
            ..Default::default()
        };
        let fit = factor_mb(&e, &opts).unwrap();
        let direct = nodewise_fit(&e, &opts.nodewise_penalty, &opts.nodewise).unwrap();
        assert_eq!(fit.theta.data(), direct.theta.data());
        assert_eq!(fit.method, Method::Mb);
    }

    fn toy_factor_panel(seed: u64) -> ErrorPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.8, -0.6]);
        let f = DMatrix::from_fn(400, 1, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        let eps = DMatrix::from_fn(400, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        ErrorPanel::from_matrix(&f * b.transpose() + eps).unwrap()
    }

    // Θ̂ must equal the inverse of B̂Σ̂fB̂' + Θ̂ε⁻¹ built from the fit's own pieces.
    fn assert_matches_composition(fit: &FgmFit) {
        let d = &fit.decomposition;
        let oracle = dense_oracle(
            fit.theta_eps.data(),
            &d.sigma_f.data().clone().try_inverse().unwrap(),
            &d.loadings,
        );
        assert!(relative_frobenius(fit.theta.data(), &oracle) < 1e-5);
    }

    #[test]
    fn factor_mb_small_penalty_matches_smw_oracle() {
        let e = toy_factor_panel(5);
        let opts = FgmOptions {
            factors: FactorCount::Fixed(1),
            nodewise_penalty: NodewisePenalty::Uniform(1e-4),
            ..Default::default()
        };
        let fit = factor_mb(&e, &opts).unwrap();
        assert_eq!(fit.tuning.q, 1);
        assert!(fit.theta.is_verified_pd());
        assert_matches_composition(&fit);
    }

    #[test]
    fn factor_glasso_small_penalty_matches_smw_oracle() {
        let e = toy_factor_panel(6);
        let opts = FgmOptions {
            factors: FactorCount::Fixed(1),
            glasso_penalty: GlassoPenalty::Fixed(1e-3),
            ..Default::default()
        };
        let fit = factor_glasso(&e, &opts).unwrap();
        assert_matches_composition(&fit);
    }

    #[test]
    fn auto_tuning_is_reported() {
        let e = toy_factor_panel(8);
        let fit = factor_glasso(&e, &FgmOptions::default()).unwrap();
        assert_eq!(fit.tuning.ic1_scores.as_ref().unwrap().len(), 2);
        assert_eq!(fit.tuning.ebic_scores.as_ref().unwrap().len(), 30);
        assert!(fit.tuning.glasso_lambda.unwrap() > 0.0);
        let fit = factor_mb(&e, &FgmOptions::default()).unwrap();
        assert_eq!(fit.tuning.nodewise_lambdas.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn equal_weight_method() {
        let e = panel(30, 4, 7);
        let fit = estimate_precision(&e, Method::EqualWeight, &FgmOptions::default()).unwrap();
        let w = crate::combine::optimal_weights(&fit.theta).unwrap();
        assert!(w.weights.iter().all(|x| (*x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn smw_matches_dense_inversion(seed in 0u64..100_000, p in 2usize..11, q in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let te = random_pd(p, &mut rng);
            let tf = random_pd(q, &mut rng);
            let b = DMatrix::from_fn(p, q, |_, _| rng.random_range(-1.0..1.0));
            let out = smw_recombine(&prec(te.clone()), &prec(tf.clone()), &b).unwrap();
            proptest::prop_assert!(relative_frobenius(out.data(), &dense_oracle(&te, &tf, &b)) < 1e-8);
        }
    }
}
