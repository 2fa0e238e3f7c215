mod io;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fgm_core::backtest::{
    prepare_data, run_backtest, write_report, BacktestConfig, MsfeTable, META_FILE, MSFE_TABLE_FILE,
};
use fgm_core::combine::{combine_forecasts, optimal_weights, realized_msfe, CombinationWeights};
use fgm_core::config::{load_backtest_config, load_experiment_config};
use fgm_core::data::ingest_panel;
use fgm_core::far::ErrorHistory;
use fgm_core::fgm::{estimate_precision, FgmOptions, GlassoPenalty, TuningReport};
use fgm_core::graph::graph_diagnostics;
use fgm_core::nodewise::NodewisePenalty;
use fgm_core::simulate::{gen_fred_like, ExperimentResults, FredLikeSpec};
use fgm_core::{ErrorPanel, FactorCount, Method};
use rand::SeedableRng;

use crate::io::{read_matrix, write_matrix, write_weights};

#[derive(Parser)]
#[command(
    name = "fgm",
    version,
    about = "Factor graphical models for forecast combination"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one precision matrix and its combination weights from an error CSV.
    Fit(FitArgs),
    /// Weights from an error CSV applied to a forecast CSV.
    Combine(CombineArgs),
    /// Run the Monte Carlo experiments described by a config file.
    Simulate(SimulateArgs),
    /// Rolling-window forecast-combination backtest on a macro panel.
    Backtest(BacktestArgs),
    /// Render the tables of a finished `backtest` or `simulate` run.
    Report(ReportArgs),
    /// Write a synthetic FRED-style monthly panel.
    GenPanel(GenPanelArgs),
}

#[derive(Args, Clone)]
struct EstimatorArgs {
    #[arg(long, default_value = "factor_glasso", value_parser = parse_method)]
    method: Method,
    /// Number of factors, or `auto` for IC1 selection.
    #[arg(long, default_value = "auto", value_parser = parse_q)]
    q: FactorCount,
    /// Fixed penalty instead of EBIC/GIC selection.
    #[arg(long)]
    lambda: Option<f64>,
    /// Subtract column means before estimating.
    #[arg(long)]
    demean: bool,
}

impl EstimatorArgs {
    fn options(&self) -> FgmOptions {
        let mut o = FgmOptions {
            factors: self.q,
            demean: self.demean,
            ..FgmOptions::default()
        };
        if let Some(l) = self.lambda {
            o.glasso_penalty = GlassoPenalty::Fixed(l);
            o.nodewise_penalty = NodewisePenalty::Uniform(l);
        }
        o
    }
}

#[derive(Args)]
struct FitArgs {
    /// CSV with a period-label column followed by one error column per model.
    #[arg(long)]
    errors: PathBuf,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long, default_value = "fgm_fit")]
    out: PathBuf,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long)]
    errors: PathBuf,
    /// Same layout as the error CSV; an optional `realized` column is scored.
    #[arg(long)]
    forecasts: PathBuf,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long, default_value = "fgm_combine")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config method list.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long, default_value = "fgm_simulate")]
    out: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    /// Panel CSV: ISO or M/D/YYYY dates first, optional transform-code row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long, value_parser = parse_q)]
    q: Option<FactorCount>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Evaluate only the last this-many origins per horizon.
    #[arg(long)]
    max_origins: Option<usize>,
    /// Use predictors as given instead of applying their transform codes.
    #[arg(long)]
    no_transform: bool,
    /// Feed in-sample residuals instead of recursive errors to the estimators.
    #[arg(long)]
    insample_errors: bool,
    #[arg(long, default_value = "fgm_backtest")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a `backtest` or `simulate` run.
    run: PathBuf,
    /// Where to write the rendered tables; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenPanelArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    predictors: Option<usize>,
    #[arg(long, default_value = "panel.csv")]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fgm_core::FgmError| e.to_string())
}

fn parse_q(s: &str) -> Result<FactorCount, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(FactorCount::Auto);
    }
    s.parse()
        .map(FactorCount::Fixed)
        .map_err(|_| format!("expected `auto` or a factor count, got `{s}`"))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    method: Method,
    n_obs: usize,
    n_models: usize,
    q: usize,
    offdiag_density: f64,
    min_eigenvalue: f64,
    tuning: &'a TuningReport,
}

fn estimate_weights(
    errors: &Path,
    est: &EstimatorArgs,
    out: &Path,
) -> Result<(Vec<String>, CombinationWeights)> {
    let m = read_matrix(errors)?;
    let panel = ErrorPanel::new(m.values, m.row_labels, m.columns.clone())?;
    let fit = estimate_precision(&panel, est.method, &est.options())?;
    let w = optimal_weights(&fit.theta)?;
    fs::create_dir_all(out)?;
    write_matrix(
        &out.join("theta.csv"),
        "model",
        &m.columns,
        &m.columns,
        fit.theta.data(),
    )?;
    write_weights(&out.join("weights.csv"), &m.columns, &w.weights)?;
    let summary = FitSummary {
        method: est.method,
        n_obs: panel.n_obs(),
        n_models: panel.n_models(),
        q: fit.tuning.q,
        offdiag_density: graph_diagnostics(&fit.theta, 1e-8).density(),
        min_eigenvalue: fit.theta.min_eigenvalue(),
        tuning: &fit.tuning,
    };
    fs::write(
        out.join("fit.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "{}: T = {}, p = {}, q = {}, off-diagonal density {:.3}",
        est.method, summary.n_obs, summary.n_models, summary.q, summary.offdiag_density
    );
    Ok((m.columns, w))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    estimate_weights(&a.errors, &a.est, &a.out)?;
    println!(
        "wrote theta.csv, weights.csv and fit.json to {}",
        a.out.display()
    );
    Ok(())
}

fn cmd_combine(a: &CombineArgs) -> Result<()> {
    let (models, w) = estimate_weights(&a.errors, &a.est, &a.out)?;
    let f = read_matrix(&a.forecasts)?;
    let realized_col = f.columns.iter().position(|c| c == "realized");
    let idx: Vec<usize> = models
        .iter()
        .map(|m| {
            f.columns
                .iter()
                .position(|c| c == m)
                .with_context(|| format!("forecast file has no column for model `{m}`"))
        })
        .collect::<Result<_>>()?;
    let combined = combine_forecasts(&f.values.select_columns(&idx), &w)?;
    let mut wr = csv::Writer::from_path(a.out.join("combined.csv"))?;
    let mut header = vec!["period", "combined"];
    if realized_col.is_some() {
        header.push("realized");
    }
    wr.write_record(&header)?;
    for (i, label) in f.row_labels.iter().enumerate() {
        let mut rec = vec![label.clone(), combined[i].to_string()];
        if let Some(c) = realized_col {
            rec.push(f.values[(i, c)].to_string());
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    if let Some(c) = realized_col {
        let y: Vec<f64> = f.values.column(c).iter().copied().collect();
        println!(
            "realized MSFE {:.6e}",
            realized_msfe(&y, combined.as_slice())?
        );
    }
    println!("wrote weights.csv and combined.csv to {}", a.out.display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = load_experiment_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !a.method.is_empty() {
        cfg.methods = a.method.clone();
    }
    let res = cfg.run()?;
    fs::create_dir_all(&a.out)?;
    res.write_csv(fs::File::create(a.out.join(RESULTS_FILE))?)?;
    res.write_summary_csv(fs::File::create(a.out.join(SUMMARY_FILE))?)?;
    fs::write(a.out.join("config.toml"), toml::to_string(&cfg)?)?;
    print_summary(&res);
    println!(
        "wrote {RESULTS_FILE} and {SUMMARY_FILE} to {}",
        a.out.display()
    );
    Ok(())
}

const RESULTS_FILE: &str = "results.csv";
const SUMMARY_FILE: &str = "summary.csv";

fn print_summary(res: &ExperimentResults) {
    println!("| experiment | method | T_or_param | metric | mean | n | failures |");
    println!("|---|---|---|---|---:|---:|---:|");
    for r in res.summary() {
        println!(
            "| {} | {} | {} | {} | {:.6} | {} | {} |",
            r.experiment, r.method, r.t_or_param, r.metric, r.mean, r.n, r.failures
        );
    }
}

fn cmd_backtest(a: &BacktestArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_backtest_config(p)?,
        None => BacktestConfig::default(),
    };
    if let Some(t) = &a.target {
        cfg.target_series = t.clone();
    }
    if !a.method.is_empty() {
        cfg.methods = a.method.clone();
    }
    if let Some(q) = a.q {
        cfg.q_mode = q;
    }
    if a.lambda.is_some() {
        cfg.lambda = a.lambda;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !a.horizons.is_empty() {
        cfg.horizons = a.horizons.clone();
    }
    if let Some(m) = a.window {
        cfg.window = m;
    }
    if a.max_origins.is_some() {
        cfg.max_origins = a.max_origins;
    }
    if a.no_transform {
        cfg.apply_tcodes = false;
    }
    if a.insample_errors {
        cfg.error_history = ErrorHistory::InSample;
    }
    cfg.validate()?;
    let table = ingest_panel(&a.data)?;
    let prep = prepare_data(&table, &cfg)?;
    let u = &prep.usable;
    println!(
        "usable rows {} .. {} ({} rows, {} predictors)",
        u.first_date, u.last_date, u.n_rows, u.n_predictors
    );
    if !u.dropped_columns.is_empty() {
        println!(
            "dropped predictors with gaps: {}",
            u.dropped_columns.join(", ")
        );
    }
    let report = run_backtest(&prep, &cfg)?;
    write_report(&report, &a.out)?;
    println!("{}", report.msfe_table().render_markdown());
    println!("wrote report to {}", a.out.display());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    fs::create_dir_all(&out)?;
    let msfe_path = a.run.join(MSFE_TABLE_FILE);
    let results_path = a.run.join(RESULTS_FILE);
    if msfe_path.exists() {
        let table = MsfeTable::read_csv(fs::File::open(&msfe_path)?)?;
        let md = table.render_markdown();
        fs::write(out.join("msfe_table.md"), &md)?;
        println!("{md}");
        if let Ok(meta) = fs::read_to_string(a.run.join(META_FILE)) {
            let v: serde_json::Value = serde_json::from_str(&meta)?;
            println!("usable range: {}", v["usable"]);
        }
    } else if results_path.exists() {
        let res = ExperimentResults::read_csv(fs::File::open(&results_path)?)?;
        res.write_summary_csv(fs::File::create(out.join(SUMMARY_FILE))?)?;
        print_summary(&res);
    } else {
        bail!(
            "{} holds neither {MSFE_TABLE_FILE} nor {RESULTS_FILE}",
            a.run.display()
        );
    }
    Ok(())
}

fn cmd_gen_panel(a: &GenPanelArgs) -> Result<()> {
    let mut spec = FredLikeSpec::default();
    if let Some(t) = a.rows {
        spec.t_obs = t;
    }
    if let Some(n) = a.predictors {
        spec.n_predictors = n;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let table = gen_fred_like(&spec, &mut rng)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    table.write_csv(fs::File::create(&a.out)?)?;
    println!(
        "wrote {} rows x {} series to {}",
        table.n_rows(),
        table.n_series(),
        a.out.display()
    );
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Combine(a) => cmd_combine(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Report(a) => cmd_report(a),
        Command::GenPanel(a) => cmd_gen_panel(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
