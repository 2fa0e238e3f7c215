//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion.
//!
//! `FGM_ACCEPTANCE_ONLY=1,3,7` runs a subset. `FGM_ACCEPTANCE_STRICT=1` turns
//! any failure into a nonzero exit status. `FGM_FRED_MD=<csv>` additionally
//! runs the backtest pipeline on a real panel.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fgm_core::backtest::{
    forecast_at_origin, msfe_from_forecasts, prepare_data, read_forecasts, run_backtest,
    write_report, BacktestConfig, MsfeTable, FORECASTS_FILE, MSFE_TABLE_FILE,
};
use fgm_core::combine::optimal_weights;
use fgm_core::data::ingest_panel;
use fgm_core::glasso::gaussian_loglik;
use fgm_core::lasso::{solve_lasso_warm, LassoOptions, LassoProblem};
use fgm_core::matrix::relative_frobenius;
use fgm_core::nodewise::NodewiseOptions;
use fgm_core::simulate::{
    gen_fred_like, gen_random_graph_precision, run_consistency_experiment,
    run_illustration_experiment, run_msfe_experiment, ConsistencyDgp, ConsistencySettings,
    ForecastDgp, FredLikeSpec, IllustrationSettings, MsfeSettings, QMode,
};
use fgm_core::tuning::ebic_score;
use fgm_core::{
    glasso_fit, nodewise_fit, sample_covariance, smw_recombine, ErrorPanel, GlassoOptions,
    MatrixRole, NodewisePenalty, SymMatrix,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_pd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian(p, p, rng);
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5
}

fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("positive definite").inverse()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_glasso = 0.0f64;
    let mut worst_nodewise = 0.0f64;
    for case in 0..50 {
        let p = 2 + case % 5;
        let sigma = random_pd(p, &mut rng);
        let s = SymMatrix::new(sigma.clone(), MatrixRole::Covariance).unwrap();
        let fit = glasso_fit(&s, 1e-8, false, &GlassoOptions::default()).unwrap();
        worst_glasso = worst_glasso.max(relative_frobenius(fit.theta.data(), &inverse(&sigma)));

        let l = sigma.clone().cholesky().unwrap().l();
        let e = gaussian(500, p, &mut rng) * l.transpose();
        let panel = ErrorPanel::from_matrix(e).unwrap();
        let nw = nodewise_fit(
            &panel,
            &NodewisePenalty::Uniform(0.0),
            &NodewiseOptions::default(),
        )
        .unwrap();
        let s_hat = sample_covariance(&panel, false).unwrap();
        worst_nodewise =
            worst_nodewise.max(relative_frobenius(nw.theta.data(), &inverse(s_hat.data())));
    }
    outcome(
        worst_glasso < 1e-4 && worst_nodewise < 1e-4,
        format!("max rel. Frobenius error glasso {worst_glasso:.2e}, nodewise {worst_nodewise:.2e} over 50 cases"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let p = 2 + case % 9;
        let q = 1 + case % 3.min(p - 1);
        let theta_eps = random_pd(p, &mut rng);
        let theta_f = random_pd(q, &mut rng);
        let b = gaussian(p, q, &mut rng);
        let got = smw_recombine(
            &SymMatrix::new(theta_eps.clone(), MatrixRole::Precision).unwrap(),
            &SymMatrix::new(theta_f.clone(), MatrixRole::Precision).unwrap(),
            &b,
        )
        .unwrap();
        let sigma = &b * inverse(&theta_f) * b.transpose() + inverse(&theta_eps);
        worst = worst.max(relative_frobenius(got.data(), &inverse(&sigma)));
    }
    outcome(
        worst < 1e-8,
        format!("max relative error {worst:.2e} over 100 instances"),
    )
}

fn criterion_3() -> Outcome {
    let settings = IllustrationSettings {
        seed: 303,
        ..IllustrationSettings::default()
    };
    let res = run_illustration_experiment(&settings).unwrap();
    let label = "T=1000;p=50";
    let g_density = res.mean("glasso", label, "offdiag_density").unwrap();
    let g_f1 = res.mean("glasso", label, "support_f1").unwrap();
    let mut pass = g_density < 0.05;
    let mut detail = format!("GLASSO density {g_density:.4}, F1 {g_f1:.3};");
    for q in &settings.q_hats {
        let f1 = res
            .mean(&format!("factor_glasso_q{q}"), label, "support_f1")
            .unwrap();
        pass &= f1 >= 2.0 * g_f1;
        detail.push_str(&format!(" Factor GLASSO q={q} F1 {f1:.3}"));
    }
    outcome(pass, detail)
}

fn criterion_4() -> Outcome {
    let settings = ConsistencySettings {
        dgp: ConsistencyDgp {
            kappa_grid: vec![7.0, 8.0, 9.0],
            ..ConsistencyDgp::default()
        },
        n_rep: 20,
        seed: 404,
        q_mode: QMode::Truth,
        ..ConsistencySettings::default()
    };
    let res = run_consistency_experiment(&settings).unwrap();
    let (lo, hi) = (
        ConsistencyDgp::t_obs(7.0).to_string(),
        ConsistencyDgp::t_obs(9.0).to_string(),
    );
    let get = |m: &str, t: &str, metric: &str| res.mean(m, t, metric).unwrap_or(f64::NAN);
    let mut pass = true;
    let mut detail = String::new();
    let mut factor_ratios = Vec::new();
    for (fm, plain) in [("factor_glasso", "glasso"), ("factor_mb", "mb")] {
        for metric in ["op_norm_err", "weight_l1_err"] {
            let (a, b, c) = (
                get(fm, &lo, metric),
                get(fm, &hi, metric),
                get(plain, &hi, metric),
            );
            let ok = b < a && b < c;
            pass &= ok;
            detail.push_str(&format!(
                " {fm} {metric} T={lo}:{a:.4} T={hi}:{b:.4} vs {plain} {c:.4} [{}];",
                if ok { "ok" } else { "x" }
            ));
        }
        factor_ratios.push(get(fm, &hi, "weight_l1_err") / get(fm, &lo, "weight_l1_err"));
    }
    // EW decays less, in relative terms, than both factor estimators
    let ew_ratio = get("ew", &hi, "weight_l1_err") / get("ew", &lo, "weight_l1_err");
    let ew_ok = factor_ratios.iter().all(|r| ew_ratio > *r);
    pass &= ew_ok;
    detail.push_str(&format!(
        " ew weight error ratio {ew_ratio:.3} vs factor {factor_ratios:.3?} [{}]",
        if ew_ok { "ok" } else { "x" }
    ));
    outcome(pass, detail.trim().to_string())
}

fn criterion_5() -> Outcome {
    let mut settings = MsfeSettings::grid(
        &ForecastDgp::default(),
        &[0.0, 0.75],
        &[400, 800],
        QMode::Fixed(5),
    );
    settings.n_rep = 20;
    settings.seed = 505;
    let res = run_msfe_experiment(&settings).unwrap();
    let mut wins = 0;
    let mut detail = String::new();
    for cell in &settings.cells {
        let get = |m: &str| res.mean(m, &cell.label, "msfe").unwrap_or(f64::NAN);
        let (fg, fmb) = (get("factor_glasso"), get("factor_mb"));
        let rest = get("ew").min(get("glasso")).min(get("mb"));
        let ok = fg <= fmb && fmb < rest;
        wins += usize::from(ok);
        detail.push_str(&format!(
            " {}: FG {fg:.4} FMB {fmb:.4} best-other {rest:.4} [{}];",
            cell.label,
            if ok { "ok" } else { "x" }
        ));
    }
    outcome(
        wins >= 3,
        format!("{wins}/4 cells ranked;{}", detail.trim_end_matches(';')),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let table = gen_fred_like(&FredLikeSpec::default(), &mut rng).unwrap();
    let cfg = BacktestConfig::default();
    let prep = prepare_data(&table, &cfg).unwrap();
    let report = run_backtest(&prep, &cfg).unwrap();

    // sentinel: corrupting every row after an origin leaves its forecasts intact
    let t = cfg.window + 20;
    let mut corrupted = prep.clone();
    for r in t + 1..corrupted.n_rows() {
        corrupted.x.row_mut(r).apply(|v| *v = v.abs() * 1e3 + 7.0);
        corrupted.ylag[r] += 1e3;
        corrupted.levels[r] += 5.0;
    }
    let sentinel = cfg.horizons.iter().all(|&h| {
        forecast_at_origin(&prep, &cfg, h, t).unwrap()
            == forecast_at_origin(&corrupted, &cfg, h, t).unwrap()
    });

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path()).unwrap();
    let msfe = report.msfe_table();
    let read_back =
        MsfeTable::read_csv(fs::File::open(dir.path().join(MSFE_TABLE_FILE)).unwrap()).unwrap();
    let rows = read_forecasts(fs::File::open(dir.path().join(FORECASTS_FILE)).unwrap()).unwrap();
    let recomputed = msfe_from_forecasts(&rows);
    let round_trip = read_back == msfe
        && report.horizons.iter().all(|hr| {
            cfg.methods.iter().enumerate().all(|(mi, m)| {
                let v = recomputed[&(hr.h, m.name().to_string())];
                (v - hr.msfe[mi]).abs() <= 1e-12 * hr.msfe[mi].abs().max(1e-300)
            })
        });

    let mut longer = true;
    let mut detail = String::new();
    for h in [2, 3, 4] {
        let fg = msfe.get(h, fgm_core::Method::FactorGlasso).unwrap();
        let g = msfe.get(h, fgm_core::Method::Glasso).unwrap();
        longer &= fg <= g;
        detail.push_str(&format!(" h={h}: FG {fg:.6e} GLASSO {g:.6e};"));
    }
    println!("{}", msfe.render_markdown());
    outcome(
        sentinel && round_trip && longer,
        format!(
            "{} origins at h=1, sentinel {sentinel}, round trip {round_trip};{}",
            report.horizons[0].origins.len(),
            detail.trim_end_matches(';')
        ),
    )
}

fn real_panel(path: &str) -> Outcome {
    let table = ingest_panel(path.as_ref()).unwrap();
    let cfg = BacktestConfig::default();
    let prep = prepare_data(&table, &cfg).unwrap();
    let report = run_backtest(&prep, &cfg).unwrap();
    println!("{}", report.msfe_table().render_markdown());
    outcome(true, format!("{} usable rows", prep.n_rows()))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut detail = Vec::new();

    let mut norm_err = 0.0f64;
    let mut scale_exact = true;
    for case in 0..200 {
        let p = 2 + case % 10;
        let theta = SymMatrix::new(random_pd(p, &mut rng), MatrixRole::Precision).unwrap();
        let w = optimal_weights(&theta).unwrap();
        norm_err = norm_err.max((w.weights.iter().sum::<f64>() - 1.0).abs());
        for c in [0.25, 2.0, 1024.0] {
            let scaled = SymMatrix::new(theta.data() * c, MatrixRole::Precision).unwrap();
            scale_exact &= optimal_weights(&scaled).unwrap().weights == w.weights;
        }
    }
    detail.push(format!(
        "weight sum error {norm_err:.1e}, scale invariance exact {scale_exact}"
    ));

    let mut monotone = true;
    for case in 0..100 {
        let n = 1 + case % 8;
        let gram = random_pd(n, &mut rng);
        let linear = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let prob = LassoProblem::new(gram, linear, rng.random_range(0.0..0.5)).unwrap();
        let step = LassoOptions {
            tol: 0.0,
            max_iter: 1,
            ..Default::default()
        };
        let mut beta = DVector::zeros(n);
        let mut last = prob.objective(&beta);
        for _ in 0..30 {
            beta = solve_lasso_warm(&prob, &step, Some(&beta)).unwrap().beta;
            let obj = prob.objective(&beta);
            monotone &= obj <= last + 1e-12;
            last = obj;
        }
    }
    detail.push(format!("coordinate descent monotone {monotone}"));

    let eye = SymMatrix::identity(2, MatrixRole::Precision);
    let loglik = gaussian_loglik(&eye, &SymMatrix::identity(2, MatrixRole::Covariance)).unwrap();
    let score = ebic_score(loglik, 3, 100, 2, 1.0);
    let ebic_ok = (score - 26.1333).abs() < 1e-3;
    detail.push(format!("EBIC hand case {score:.4}"));

    let mut floor_ok = true;
    for case in 0..200 {
        let p = 2 + case % 40;
        let pi = rng.random_range(0.0..1.0);
        let theta = gen_random_graph_precision(p, pi, 0.1, 0.3, &mut rng).unwrap();
        floor_ok &= theta.min_eigenvalue() >= 0.1 + 0.1 - 1e-10;
    }
    detail.push(format!("random-graph eigenvalue floor {floor_ok}"));

    outcome(
        norm_err < 1e-12 && scale_exact && monotone && ebic_ok && floor_ok,
        detail.join(", "),
    )
}

type Criterion = (u8, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            1,
            "oracle equivalence",
            Duration::from_secs(30),
            criterion_1,
        ),
        (2, "SMW correctness", Duration::from_secs(5), criterion_2),
        (
            3,
            "partial-correlation recovery",
            Duration::from_secs(600),
            criterion_3,
        ),
        (
            4,
            "consistency trends",
            Duration::from_secs(1800),
            criterion_4,
        ),
        (5, "MSFE ranking", Duration::from_secs(2700), criterion_5),
        (6, "FRED-like backtest", Duration::MAX, criterion_6),
        (7, "invariant suite", Duration::from_secs(60), criterion_7),
    ];
    let only: Option<Vec<u8>> = std::env::var("FGM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (
                false,
                format!(
                    "panicked: {}",
                    e.downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default()
                ),
            ),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id} ({name}): {} in {:.1}s; {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if let Ok(path) = std::env::var("FGM_FRED_MD") {
        let o = real_panel(&path);
        println!(
            "real panel {path}: {}; {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var("FGM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
