//! Precision-matrix estimators for forecast-error panels with a latent factor
//! structure, combination weights, simulation designs and a rolling backtest.

pub mod backtest;
pub mod combine;
pub mod config;
pub mod data;
pub mod error;
pub mod factor;
pub mod far;
pub mod fgm;
pub mod glasso;
pub mod graph;
pub mod lasso;
pub mod matrix;
pub mod nodewise;
pub mod panel;
mod par;
pub mod simulate;
pub mod tuning;

pub use combine::{optimal_weights, CombinationWeights};
pub use error::{FgmError, Result};
pub use factor::{estimate_factors, select_num_factors, FactorDecomposition};
pub use fgm::{
    estimate_precision, factor_glasso, factor_mb, smw_recombine, FactorCount, FgmFit, FgmOptions,
    Method,
};
pub use glasso::{glasso_fit, GlassoFit, GlassoOptions};
pub use matrix::{MatrixRole, PdStatus, SymMatrix};
pub use nodewise::{nodewise_fit, NodewiseFit, NodewisePenalty};
pub use panel::{sample_covariance, ErrorPanel};
