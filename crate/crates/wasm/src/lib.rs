//! Browser bindings. Every entry point takes and returns JSON strings; the
//! `*_json` functions are the native-testable cores of the exported ones.

use fgm_core::combine::optimal_weights;
use fgm_core::fgm::GlassoPenalty;
use fgm_core::graph::graph_diagnostics;
use fgm_core::matrix::partial_correlations;
use fgm_core::nodewise::NodewisePenalty;
use fgm_core::simulate::{gen_illustration_panel, replication_rng, support_f1, IllustrationDgp};
use fgm_core::{estimate_precision, ErrorPanel, FactorCount, FgmOptions, Method};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const MAX_CELLS: usize = 200_000;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_shape(t: usize, p: usize) -> Result<(), String> {
    if p < 2 || t < 3 {
        return Err("need at least 2 series and 3 periods".into());
    }
    if t * p > MAX_CELLS {
        return Err(format!(
            "panel of {t} x {p} exceeds the {MAX_CELLS}-cell limit"
        ));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SimulatedPanel {
    /// `T × p`, one row per period.
    pub errors: Vec<Vec<f64>>,
    pub partial_corr_true: Vec<Vec<f64>>,
}

pub fn simulate_panel_json(seed: u32, t_obs: usize, p: usize, q: usize) -> Result<String, String> {
    check_shape(t_obs, p)?;
    let dgp = IllustrationDgp {
        t_obs,
        p,
        q,
        ..IllustrationDgp::default()
    };
    let draw = gen_illustration_panel(&dgp, &mut replication_rng(seed.into(), 0, 0))
        .map_err(|e| e.to_string())?;
    let out = SimulatedPanel {
        errors: rows(draw.panel.values()),
        partial_corr_true: rows(&partial_correlations(draw.theta_true.data())),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct EstimateRequest {
    errors: Vec<Vec<f64>>,
    method: String,
    /// `None` selects the factor count by IC1.
    q: Option<usize>,
    /// `None` selects the penalty by EBIC/GIC.
    lambda: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct EstimateResponse {
    pub method: String,
    pub q: usize,
    pub weights: Vec<f64>,
    pub partial_corr: Vec<Vec<f64>>,
    pub offdiag_density: f64,
    pub glasso_lambda: Option<f64>,
}

fn panel_from_rows(errors: &[Vec<f64>]) -> Result<ErrorPanel, String> {
    let t = errors.len();
    let p = errors.first().map_or(0, Vec::len);
    check_shape(t, p)?;
    if errors.iter().any(|r| r.len() != p) {
        return Err("ragged error matrix".into());
    }
    let m = DMatrix::from_fn(t, p, |i, j| errors[i][j]);
    ErrorPanel::from_matrix(m).map_err(|e| e.to_string())
}

pub fn estimate_json(request: &str) -> Result<String, String> {
    let req: EstimateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let method: Method = req
        .method
        .parse()
        .map_err(|e: fgm_core::FgmError| e.to_string())?;
    let panel = panel_from_rows(&req.errors)?;
    let mut opts = FgmOptions {
        factors: req.q.map_or(FactorCount::Auto, FactorCount::Fixed),
        ..FgmOptions::default()
    };
    if let Some(l) = req.lambda {
        opts.glasso_penalty = GlassoPenalty::Fixed(l);
        opts.nodewise_penalty = NodewisePenalty::Uniform(l);
    }
    let fit = estimate_precision(&panel, method, &opts).map_err(|e| e.to_string())?;
    let w = optimal_weights(&fit.theta).map_err(|e| e.to_string())?;
    let out = EstimateResponse {
        method: method.name().into(),
        q: fit.tuning.q,
        weights: w.weights,
        partial_corr: rows(&partial_correlations(fit.theta.data())),
        offdiag_density: graph_diagnostics(&fit.theta, 1e-8).density(),
        glasso_lambda: fit.tuning.glasso_lambda,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
pub struct SupportRow {
    pub name: String,
    pub f1: f64,
    pub density: f64,
}

/// Support recovery of GLASSO and Factor GLASSO at `q̂ = 1..=q_max` on one draw.
pub fn compare_support_json(
    seed: u32,
    t_obs: usize,
    p: usize,
    q: usize,
    q_max: usize,
) -> Result<String, String> {
    check_shape(t_obs, p)?;
    let dgp = IllustrationDgp {
        t_obs,
        p,
        q,
        ..IllustrationDgp::default()
    };
    let draw = gen_illustration_panel(&dgp, &mut replication_rng(seed.into(), 0, 0))
        .map_err(|e| e.to_string())?;
    let mut fits = vec![("GLASSO".to_string(), Method::Glasso, FactorCount::Fixed(0))];
    fits.extend((1..=q_max.min(p - 1)).map(|k| {
        (
            format!("Factor GLASSO q={k}"),
            Method::FactorGlasso,
            FactorCount::Fixed(k),
        )
    }));
    let mut out = Vec::new();
    for (name, method, count) in fits {
        let opts = FgmOptions {
            factors: count,
            ..FgmOptions::default()
        };
        let fit = estimate_precision(&draw.panel, method, &opts).map_err(|e| e.to_string())?;
        let s = support_f1(fit.theta.data(), draw.theta_true.data(), 1e-8);
        out.push(SupportRow {
            name,
            f1: s.f1,
            density: s.density,
        });
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = simulatePanel)]
pub fn simulate_panel(seed: u32, t_obs: usize, p: usize, q: usize) -> Result<String, JsError> {
    simulate_panel_json(seed, t_obs, p, q).map_err(|e| JsError::new(&e))
}

/// `request`: `{"errors": [[..], ..], "method": "factor_glasso", "q": null, "lambda": null}`.
#[wasm_bindgen]
pub fn estimate(request: &str) -> Result<String, JsError> {
    estimate_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareSupport)]
pub fn compare_support(
    seed: u32,
    t_obs: usize,
    p: usize,
    q: usize,
    q_max: usize,
) -> Result<String, JsError> {
    compare_support_json(seed, t_obs, p, q, q_max).map_err(|e| JsError::new(&e))
}
