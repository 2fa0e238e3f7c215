//! Monte Carlo designs and experiment drivers.

mod consistency;
mod forecast;
mod fred_like;
mod illustration;
mod results;

pub use consistency::{
    gen_error_panel, gen_error_panel_with, gen_random_graph_precision, run_consistency_experiment,
    ConsistencyDgp, ConsistencySettings, ErrorPanelDraw,
};
pub use forecast::{
    gen_forecast_data, ma_coefficients, msfe_replication, run_msfe_experiment, ForecastData,
    ForecastDgp, MsfeCell, MsfeReplication, MsfeSettings, SweepParam,
};
pub use fred_like::{gen_fred_like, FredLikeSpec};
pub use illustration::{
    gen_illustration_panel, run_illustration_experiment, support_f1, IllustrationDgp,
    IllustrationDraw, IllustrationSettings, SupportScore,
};
pub use results::{ExperimentResults, FailureRecord, ResultRecord, SummaryRow};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How factor methods choose `q` inside an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// The generating factor count.
    Truth,
    /// IC1 selection.
    Auto,
    Fixed(usize),
}

/// Independent stream for replication `rep` of cell `cell`.
pub fn replication_rng(seed: u64, cell: usize, rep: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

/// Upper Cholesky factor `U` (`U'U = R`) of the `n × n` matrix `R_ij = ρ^|i−j|`.
pub fn toeplitz_upper_cholesky(n: usize, rho: f64) -> DMatrix<f64> {
    let c = (1.0 - rho * rho).sqrt();
    DMatrix::from_fn(n, n, |i, j| {
        if i > j {
            0.0
        } else if i == 0 {
            rho.powi(j as i32)
        } else {
            c * rho.powi((j - i) as i32)
        }
    })
}

pub(crate) fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `T × p` Gaussian draws with covariance `Θ⁻¹`, using the lower Cholesky
/// factor `L` of `Θ`: rows solve `L' x = z`.
pub(crate) fn gaussian_rows_from_precision(
    theta_chol_l: &DMatrix<f64>,
    t_obs: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let p = theta_chol_l.nrows();
    let lt = theta_chol_l.transpose();
    let mut out = DMatrix::zeros(t_obs, p);
    for t in 0..t_obs {
        let z = normal_vector(rng, p);
        let x = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        out.row_mut(t).copy_from(&x.transpose());
    }
    out
}
