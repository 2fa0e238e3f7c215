//! Rolling-window forecast-combination backtest on a dated panel.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::combine::CombinationWeights;
use crate::data::{apply_tcode, tcode_lag, transform_target, DataTable, TargetTransform};
use crate::error::{FgmError, Result};
use crate::far::{fit_far_window, ErrorHistory, FarSpec, FarWindow};
use crate::fgm::{
    combination_weights, FactorCount, FgmOptions, GlassoPenalty, Method, TuningReport,
};
use crate::nodewise::NodewisePenalty;
use crate::par;
use crate::tuning::GridSpec;

/// Column order of the MSFE table.
pub const TABLE_ORDER: [Method; 5] = [
    Method::EqualWeight,
    Method::Glasso,
    Method::FactorGlasso,
    Method::Mb,
    Method::FactorMb,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub target_series: String,
    pub transform: TargetTransform,
    pub horizons: Vec<usize>,
    /// Rolling window length `m`.
    pub window: usize,
    pub k_max: usize,
    pub l_max: usize,
    pub methods: Vec<Method>,
    pub q_mode: FactorCount,
    pub q_max: usize,
    /// Apply the per-series transform codes of the input file to predictors.
    pub apply_tcodes: bool,
    pub error_history: ErrorHistory,
    /// Demean each error history before estimating its precision.
    pub center_errors: bool,
    /// Fixed penalty for every method instead of EBIC/GIC selection.
    pub lambda: Option<f64>,
    pub eta: f64,
    pub grid: GridSpec,
    /// Evaluate only the last this-many origins per horizon.
    pub max_origins: Option<usize>,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            target_series: "INDPRO".into(),
            transform: TargetTransform::AvgLogGrowth,
            horizons: vec![1, 2, 3, 4],
            window: 120,
            k_max: 9,
            l_max: 11,
            methods: TABLE_ORDER.to_vec(),
            q_mode: FactorCount::Auto,
            q_max: 8,
            apply_tcodes: true,
            error_history: ErrorHistory::Recursive,
            center_errors: true,
            lambda: None,
            eta: 1.0,
            grid: GridSpec::default(),
            max_origins: None,
            seed: 0,
        }
    }
}

impl BacktestConfig {
    pub fn far_spec(&self) -> FarSpec {
        FarSpec::new(self.k_max, self.l_max)
    }

    pub fn fgm_options(&self) -> FgmOptions {
        FgmOptions {
            factors: self.q_mode,
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

    /// Checks that do not depend on the data length.
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(FgmError::Config(
                "horizons must be a non-empty list of integers ≥ 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(FgmError::Config("at least one method is required".into()));
        }
        let spec = self.far_spec();
        let h_max = *self.horizons.iter().max().expect("non-empty");
        let need = spec.l_max.saturating_sub(1) + spec.n_init() + 2 * h_max + 1;
        if self.window < need {
            return Err(FgmError::Config(format!(
                "window {} is too short for K = {}, L = {} at h = {h_max}; need at least {need}",
                self.window, self.k_max, self.l_max
            )));
        }
        if self.k_max >= self.window {
            return Err(FgmError::Config("K must be smaller than the window".into()));
        }
        if self.max_origins == Some(0) {
            return Err(FgmError::Config("max_origins must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsableRange {
    pub first_date: String,
    pub last_date: String,
    pub n_rows: usize,
    pub n_predictors: usize,
    /// Predictors with a missing value inside the range.
    pub dropped_columns: Vec<String>,
}

/// Predictors and target aligned on the usable rows.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub labels: Vec<String>,
    /// `T × N` transformed predictors.
    pub x: DMatrix<f64>,
    pub levels: Vec<f64>,
    /// One-period transform of the target, used as the autoregressive lag.
    pub ylag: Vec<f64>,
    pub predictor_names: Vec<String>,
    pub usable: UsableRange,
}

impl PreparedData {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// `h`-step target aligned to rows; entry `s` is dated `s` and is
    /// missing for `s < h` under the growth transforms.
    pub fn target(&self, transform: TargetTransform, h: usize) -> Result<Vec<Option<f64>>> {
        let v = transform_target(&self.levels, &self.labels, transform, h)?;
        Ok(match transform {
            TargetTransform::LogLevel => v.into_iter().map(Some).collect(),
            _ => std::iter::repeat_n(None, h)
                .chain(v.into_iter().map(Some))
                .collect(),
        })
    }
}

/// Applies transform codes, finds the longest block of rows where the
/// target and its one-period transform exist, and drops predictors with
/// missing values inside that block.
pub fn prepare_data(table: &DataTable, cfg: &BacktestConfig) -> Result<PreparedData> {
    let ti = table.column_index(&cfg.target_series).ok_or_else(|| {
        FgmError::Config(format!("target series `{}` not found", cfg.target_series))
    })?;
    let n_rows = table.n_rows();
    let mut lead = 0;
    let mut predictors = Vec::new();
    for (j, name) in table.names.iter().enumerate() {
        if j == ti {
            continue;
        }
        let col = match (&table.tcodes, cfg.apply_tcodes) {
            (Some(codes), true) => {
                lead = lead.max(tcode_lag(codes[j]));
                apply_tcode(&table.columns[j], codes[j])?
            }
            _ => table.columns[j].clone(),
        };
        predictors.push((name.clone(), col));
    }
    if predictors.is_empty() {
        return Err(FgmError::Config(
            "no predictor series besides the target".into(),
        ));
    }
    let level = &table.columns[ti];
    let valid_level = |v: Option<f64>| match v {
        Some(a) if cfg.transform.uses_log() => a > 0.0,
        Some(a) => a != 0.0,
        None => false,
    };
    let ylag_at = |s: usize| -> Option<f64> {
        let cur = level[s].filter(|v| valid_level(Some(*v)))?;
        match cfg.transform {
            TargetTransform::LogLevel => Some(cur.ln()),
            _ if s == 0 => None,
            TargetTransform::AvgLogGrowth => level[s - 1]
                .filter(|v| valid_level(Some(*v)))
                .map(|p| (cur / p).ln()),
            TargetTransform::AvgChange => level[s - 1]
                .filter(|v| valid_level(Some(*v)))
                .map(|p| cur / p),
        }
    };
    let (mut best, mut run_start) = ((0usize, 0usize), None);
    for s in lead..=n_rows {
        let ok = s < n_rows && ylag_at(s).is_some();
        match (ok, run_start) {
            (true, None) => run_start = Some(s),
            (false, Some(a)) => {
                if s - a > best.1 - best.0 {
                    best = (a, s);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let (a, b) = best;
    if b <= a {
        return Err(FgmError::Config(format!(
            "target `{}` has no usable rows",
            cfg.target_series
        )));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (name, col) in predictors {
        if col[a..b].iter().all(Option::is_some) {
            kept.push((name, col));
        } else {
            dropped.push(name);
        }
    }
    if kept.is_empty() {
        return Err(FgmError::Config(
            "every predictor has missing values in the usable range".into(),
        ));
    }
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} predictors with missing values: {}",
            dropped.len(),
            dropped.join(", ")
        );
    }
    let t = b - a;
    let x = DMatrix::from_fn(t, kept.len(), |i, j| {
        kept[j].1[a + i].expect("checked complete")
    });
    let labels: Vec<String> = table.dates[a..b]
        .iter()
        .map(|d| d.format("%Y-%m-%d").to_string())
        .collect();
    Ok(PreparedData {
        usable: UsableRange {
            first_date: labels[0].clone(),
            last_date: labels[t - 1].clone(),
            n_rows: t,
            n_predictors: kept.len(),
            dropped_columns: dropped,
        },
        labels,
        x,
        levels: (a..b).map(|s| level[s].expect("checked valid")).collect(),
        ylag: (a..b).map(|s| ylag_at(s).expect("checked valid")).collect(),
        predictor_names: kept.into_iter().map(|(n, _)| n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub forecast: f64,
    pub weights: Vec<f64>,
    pub q: Option<usize>,
    /// Graphical-lasso penalty, or the mean nodewise penalty.
    pub lambda: Option<f64>,
    /// Estimation failed and equal weights were used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginOutcome {
    /// Row index of the origin in the prepared data.
    pub t: usize,
    pub origin: String,
    pub horizon: usize,
    pub model_forecasts: DVector<f64>,
    pub methods: Vec<MethodOutcome>,
}

fn tuning_summary(report: &TuningReport) -> (Option<usize>, Option<f64>) {
    let lambda = report.glasso_lambda.or_else(|| {
        report
            .nodewise_lambdas
            .as_ref()
            .filter(|l| !l.is_empty())
            .map(|l| l.iter().sum::<f64>() / l.len() as f64)
    });
    (Some(report.q), lambda)
}

/// Forecasts of every method made at row `t` for horizon `h`, using only
/// rows `≤ t`.
pub fn forecast_at_origin(
    prep: &PreparedData,
    cfg: &BacktestConfig,
    h: usize,
    t: usize,
) -> Result<OriginOutcome> {
    let m = cfg.window;
    if t + 1 < m || t >= prep.n_rows() {
        return Err(FgmError::InvalidParameter(format!(
            "origin {t} outside the data for window {m}"
        )));
    }
    let target = prep.target(cfg.transform, h)?;
    let w0 = t + 1 - m;
    // target dated w0+i+h ≤ t for i < m−h
    let tgt: Vec<f64> = (0..m - h)
        .map(|i| {
            target[w0 + i + h]
                .ok_or_else(|| FgmError::Config("target missing inside the window".into()))
        })
        .collect::<Result<_>>()?;
    let x = prep.x.rows(w0, m).into_owned();
    let spec = cfg.far_spec();
    let out = fit_far_window(
        &spec,
        &FarWindow {
            x: &x,
            ylag: &prep.ylag[w0..=t],
            target: &tgt,
            h,
        },
        cfg.error_history,
    )?;
    let p = spec.n_models();
    let mut opts = cfg.fgm_options();
    opts.factors = opts.factors.capped(out.errors.nrows(), p);
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let (w, tuning, fallback) =
                match combination_weights(&out.errors, method, &opts, cfg.center_errors) {
                    Ok((w, tuning)) => (w, tuning, false),
                    Err(e) => {
                        log::warn!(
                            "{method} at {} (h = {h}): {e}; using equal weights",
                            prep.labels[t]
                        );
                        (CombinationWeights::equal(p), None, true)
                    }
                };
            let (q, lambda) = tuning.as_ref().map_or((None, None), tuning_summary);
            MethodOutcome {
                method,
                forecast: w.as_vector().dot(&out.forecasts),
                weights: w.weights,
                q,
                lambda,
                fallback,
            }
        })
        .collect();
    Ok(OriginOutcome {
        t,
        origin: prep.labels[t].clone(),
        horizon: h,
        model_forecasts: out.forecasts,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub h: usize,
    pub origins: Vec<String>,
    pub realized: Vec<f64>,
    /// Per method, in config order.
    pub forecasts: Vec<Vec<f64>>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub q_path: Vec<Vec<Option<usize>>>,
    pub lambda_path: Vec<Vec<Option<f64>>>,
    pub fallback_path: Vec<Vec<bool>>,
    pub msfe: Vec<f64>,
    pub fallbacks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub usable: UsableRange,
    pub model_names: Vec<String>,
    pub horizons: Vec<HorizonResult>,
}

impl BacktestReport {
    pub fn msfe_table(&self) -> MsfeTable {
        MsfeTable {
            methods: self.config.methods.clone(),
            rows: self
                .horizons
                .iter()
                .map(|r| (r.h, r.msfe.clone()))
                .collect(),
        }
    }
}

/// Origins evaluated for horizon `h`: rows `m−1 ..= T−1−h`.
pub fn origins(n_rows: usize, cfg: &BacktestConfig, h: usize) -> Result<Vec<usize>> {
    let m = cfg.window;
    if m + h > n_rows {
        return Err(FgmError::Config(format!(
            "window {m} plus horizon {h} exceeds the {n_rows} usable rows"
        )));
    }
    let all: Vec<usize> = (m - 1..=n_rows - 1 - h).collect();
    Ok(match cfg.max_origins {
        Some(k) if k < all.len() => all[all.len() - k..].to_vec(),
        _ => all,
    })
}

pub fn run_backtest(prep: &PreparedData, cfg: &BacktestConfig) -> Result<BacktestReport> {
    cfg.validate()?;
    let mut horizons = Vec::new();
    for &h in &cfg.horizons {
        let ts = origins(prep.n_rows(), cfg, h)?;
        let target = prep.target(cfg.transform, h)?;
        let outcomes = par::map_collect(&ts, |&t| forecast_at_origin(prep, cfg, h, t))?;
        let k = cfg.methods.len();
        let mut res = HorizonResult {
            h,
            origins: Vec::with_capacity(ts.len()),
            realized: Vec::with_capacity(ts.len()),
            forecasts: vec![Vec::new(); k],
            weights: vec![Vec::new(); k],
            q_path: vec![Vec::new(); k],
            lambda_path: vec![Vec::new(); k],
            fallback_path: vec![Vec::new(); k],
            msfe: vec![0.0; k],
            fallbacks: vec![0; k],
        };
        for o in outcomes {
            res.origins.push(o.origin);
            res.realized
                .push(target[o.t + h].expect("origin range keeps the target inside the data"));
            for (mi, mo) in o.methods.into_iter().enumerate() {
                res.forecasts[mi].push(mo.forecast);
                res.weights[mi].push(mo.weights);
                res.q_path[mi].push(mo.q);
                res.lambda_path[mi].push(mo.lambda);
                res.fallbacks[mi] += usize::from(mo.fallback);
                res.fallback_path[mi].push(mo.fallback);
            }
        }
        for mi in 0..k {
            res.msfe[mi] = crate::combine::realized_msfe(&res.realized, &res.forecasts[mi])?;
        }
        horizons.push(res);
    }
    Ok(BacktestReport {
        config: cfg.clone(),
        usable: prep.usable.clone(),
        model_names: cfg.far_spec().model_names(),
        horizons,
    })
}

/// MSFE per horizon (rows) and method (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MsfeTable {
    pub methods: Vec<Method>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl MsfeTable {
    pub fn get(&self, h: usize, method: Method) -> Option<f64> {
        let mi = self.methods.iter().position(|m| *m == method)?;
        self.rows
            .iter()
            .find(|(hh, _)| *hh == h)
            .map(|(_, v)| v[mi])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["h".to_string()];
        header.extend(self.methods.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for (h, vals) in &self.rows {
            let mut rec = vec![h.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("h") {
            return Err(FgmError::InvalidInput(
                "MSFE table must start with an `h` column".into(),
            ));
        }
        let methods = header
            .iter()
            .skip(1)
            .map(str::parse)
            .collect::<Result<Vec<Method>>>()?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| FgmError::InvalidInput(format!("bad number `{s}` in MSFE table")))
            };
            let h = parse(&rec[0])? as usize;
            let vals = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
            rows.push((h, vals));
        }
        Ok(Self { methods, rows })
    }

    /// Markdown table with the smallest MSFE of each row in bold.
    pub fn render_markdown(&self) -> String {
        let mut s = String::from("| h |");
        for m in &self.methods {
            s.push_str(&format!(" {} |", display_name(*m)));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(self.methods.len()));
        s.push('\n');
        for (h, vals) in &self.rows {
            let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
            s.push_str(&format!("| {h} |"));
            for v in vals {
                let v_s = four_significant(*v);
                if *v == best {
                    s.push_str(&format!(" **{v_s}** |"));
                } else {
                    s.push_str(&format!(" {v_s} |"));
                }
            }
            s.push('\n');
        }
        s
    }
}

fn four_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.4}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-6..6).contains(&mag) {
        format!("{v:.*}", (3 - mag).max(0) as usize)
    } else {
        format!("{v:.3e}")
    }
}

pub fn display_name(m: Method) -> &'static str {
    match m {
        Method::EqualWeight => "EW",
        Method::Glasso => "GLASSO",
        Method::FactorGlasso => "Factor GLASSO",
        Method::Mb => "MB",
        Method::FactorMb => "Factor MB",
    }
}

/// One line of `forecasts.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub origin: String,
    pub horizon: usize,
    pub method: String,
    pub forecast: f64,
    pub realized: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TuningRow {
    origin: String,
    horizon: usize,
    method: String,
    q: Option<usize>,
    lambda: Option<f64>,
    fallback: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: BacktestConfig,
    pub seed: u64,
    pub package: String,
    pub version: String,
    pub usable: UsableRange,
    pub n_models: usize,
    pub origins_per_horizon: BTreeMap<usize, usize>,
    pub fallbacks: BTreeMap<String, usize>,
}

pub const MSFE_TABLE_FILE: &str = "msfe_table.csv";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const TUNING_FILE: &str = "tuning_path.csv";
pub const META_FILE: &str = "run_meta.json";

/// Writes the MSFE table, per-origin forecasts, weights, tuning path and
/// run metadata into `dir`.
pub fn write_report(report: &BacktestReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    report
        .msfe_table()
        .write_csv(fs::File::create(dir.join(MSFE_TABLE_FILE))?)?;

    let mut fw = csv::Writer::from_path(dir.join(FORECASTS_FILE))?;
    let mut ww = csv::Writer::from_path(dir.join(WEIGHTS_FILE))?;
    let mut tw = csv::Writer::from_path(dir.join(TUNING_FILE))?;
    let mut header = vec!["origin".to_string(), "horizon".into(), "method".into()];
    header.extend(report.model_names.iter().cloned());
    ww.write_record(&header)?;
    let mut fallbacks: BTreeMap<String, usize> = BTreeMap::new();
    for hr in &report.horizons {
        for (mi, method) in report.config.methods.iter().enumerate() {
            *fallbacks.entry(method.name().into()).or_default() += hr.fallbacks[mi];
        }
        for (i, origin) in hr.origins.iter().enumerate() {
            for (mi, method) in report.config.methods.iter().enumerate() {
                fw.serialize(ForecastRow {
                    origin: origin.clone(),
                    horizon: hr.h,
                    method: method.name().into(),
                    forecast: hr.forecasts[mi][i],
                    realized: hr.realized[i],
                })?;
                let mut rec = vec![origin.clone(), hr.h.to_string(), method.name().into()];
                rec.extend(hr.weights[mi][i].iter().map(|w| w.to_string()));
                ww.write_record(&rec)?;
                tw.serialize(TuningRow {
                    origin: origin.clone(),
                    horizon: hr.h,
                    method: method.name().into(),
                    q: hr.q_path[mi][i],
                    lambda: hr.lambda_path[mi][i],
                    fallback: hr.fallback_path[mi][i],
                })?;
            }
        }
    }
    fw.flush()?;
    ww.flush()?;
    tw.flush()?;
    let meta = RunMeta {
        config: report.config.clone(),
        seed: report.config.seed,
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        usable: report.usable.clone(),
        n_models: report.model_names.len(),
        origins_per_horizon: report
            .horizons
            .iter()
            .map(|h| (h.h, h.origins.len()))
            .collect(),
        fallbacks,
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_forecasts<R: Read>(input: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<ForecastRow>, _>>()?)
}

/// Realized MSFE per `(horizon, method)` recomputed from forecast rows.
pub fn msfe_from_forecasts(rows: &[ForecastRow]) -> BTreeMap<(usize, String), f64> {
    let mut acc: BTreeMap<(usize, String), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.horizon, r.method.clone())).or_default();
        e.0 += (r.realized - r.forecast).powi(2);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}
