//! TOML configuration files for experiments and backtests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::BacktestConfig;
use crate::error::{FgmError, Result};
use crate::far::ErrorHistory;
use crate::fgm::{FgmOptions, GlassoPenalty, Method};
use crate::nodewise::NodewisePenalty;
use crate::simulate::{
    run_consistency_experiment, run_illustration_experiment, run_msfe_experiment, ConsistencyDgp,
    ConsistencySettings, ExperimentResults, ForecastDgp, IllustrationDgp, IllustrationSettings,
    MsfeSettings, QMode, SweepParam,
};
use crate::tuning::GridSpec;

/// Penalty and factor-count settings shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Fixed penalty instead of EBIC/GIC selection.
    pub lambda: Option<f64>,
    pub eta: f64,
    pub grid: GridSpec,
    pub q_max: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        let d = FgmOptions::default();
        Self {
            lambda: None,
            eta: d.eta,
            grid: d.grid,
            q_max: d.q_max,
        }
    }
}

impl TuningConfig {
    pub fn fgm_options(&self) -> FgmOptions {
        FgmOptions {
            q_max: self.q_max,
            glasso_penalty: self
                .lambda
                .map_or(GlassoPenalty::Ebic, GlassoPenalty::Fixed),
            grid: self.grid,
            eta: self.eta,
            nodewise_penalty: self
                .lambda
                .map_or(NodewisePenalty::Gic(self.grid), NodewisePenalty::Uniform),
            ..FgmOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub dgp: ConsistencyDgp,
    pub q_mode: QMode,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            dgp: ConsistencyDgp::default(),
            q_mode: QMode::Truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub t_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsfeConfig {
    pub dgp: ForecastDgp,
    pub t_grid: Vec<usize>,
    pub c1_grid: Vec<f64>,
    pub q_mode: QMode,
    pub error_history: ErrorHistory,
    pub center_errors: bool,
    /// Replaces the `(c1, T)` grid with a one-parameter sweep.
    pub sweep: Option<SweepConfig>,
}

impl Default for MsfeConfig {
    fn default() -> Self {
        Self {
            dgp: ForecastDgp::default(),
            t_grid: vec![400, 800],
            c1_grid: vec![0.0, 0.75],
            q_mode: QMode::Fixed(5),
            error_history: ErrorHistory::Recursive,
            center_errors: false,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IllustrationConfig {
    pub dgp: IllustrationDgp,
    pub q_hats: Vec<usize>,
    pub support_tol: f64,
}

impl Default for IllustrationConfig {
    fn default() -> Self {
        Self {
            dgp: IllustrationDgp::default(),
            q_hats: vec![1, 2, 3],
            support_tol: 1e-8,
        }
    }
}

/// Experiment file: shared settings plus one optional table per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_rep: usize,
    pub methods: Vec<Method>,
    pub tuning: TuningConfig,
    pub consistency: Option<ConsistencyConfig>,
    pub msfe: Option<MsfeConfig>,
    pub illustration: Option<IllustrationConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_rep: 100,
            methods: Method::ALL.to_vec(),
            tuning: TuningConfig::default(),
            consistency: None,
            msfe: None,
            illustration: None,
        }
    }
}

impl ExperimentConfig {
    pub fn consistency_settings(&self) -> Option<ConsistencySettings> {
        self.consistency.as_ref().map(|c| ConsistencySettings {
            dgp: c.dgp.clone(),
            methods: self.methods.clone(),
            n_rep: self.n_rep,
            seed: self.seed,
            q_mode: c.q_mode,
            fgm: self.tuning.fgm_options(),
        })
    }

    pub fn msfe_settings(&self) -> Result<Option<MsfeSettings>> {
        let Some(c) = &self.msfe else { return Ok(None) };
        let mut s = match &c.sweep {
            Some(sw) => MsfeSettings::sweep(&c.dgp, sw.t_obs, c.q_mode, sw.param, &sw.values)?,
            None => MsfeSettings::grid(&c.dgp, &c.c1_grid, &c.t_grid, c.q_mode),
        };
        s.methods = self.methods.clone();
        s.n_rep = self.n_rep;
        s.seed = self.seed;
        s.history = c.error_history;
        s.center_errors = c.center_errors;
        s.fgm = self.tuning.fgm_options();
        Ok(Some(s))
    }

    pub fn illustration_settings(&self) -> Option<IllustrationSettings> {
        self.illustration.as_ref().map(|c| IllustrationSettings {
            dgp: c.dgp.clone(),
            n_rep: self.n_rep,
            seed: self.seed,
            q_hats: c.q_hats.clone(),
            fgm: self.tuning.fgm_options(),
            support_tol: c.support_tol,
        })
    }

    /// Runs every configured experiment; results share one long table.
    pub fn run(&self) -> Result<ExperimentResults> {
        if self.consistency.is_none() && self.msfe.is_none() && self.illustration.is_none() {
            return Err(FgmError::Config(
                "no experiment configured; add a [consistency], [msfe] or [illustration] table"
                    .into(),
            ));
        }
        let mut all = ExperimentResults::default();
        if let Some(s) = self.illustration_settings() {
            all.extend(run_illustration_experiment(&s)?);
        }
        if let Some(s) = self.consistency_settings() {
            all.extend(run_consistency_experiment(&s)?);
        }
        if let Some(s) = self.msfe_settings()? {
            all.extend(run_msfe_experiment(&s)?);
        }
        Ok(all)
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| FgmError::Config(format!("{}: {e}", path.display())))
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    read_toml(path)
}

pub fn load_backtest_config(path: &Path) -> Result<BacktestConfig> {
    let cfg: BacktestConfig = read_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}
