//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when a gating criterion fails.

mod common;

use std::cell::RefCell;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use dcc_lab::cli::standardized_residuals;
use dcc_lab::dcc::{
    dcc_loglik, dcc_recursion, fit_dcc, implied_news_matrix, pairwise_series, scalar_dcc_recursion, DccFit, DccMode,
    DccParams,
};
use dcc_lab::descriptive::{describe, jarque_bera};
use dcc_lab::garch::{garch_loglik, GarchParams};
use dcc_lab::ingest::{load_price_csv, log_returns, CsvOptions};
use dcc_lab::optimize::{nelder_mead, NelderMeadOptions};
use dcc_lab::simulate::DgpSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

const BIN: &str = env!("CARGO_BIN_EXE_dcc-lab");
const REPLICATION_ENV: &str = "DCC_LAB_REPLICATION_CSV";

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

thread_local! {
    // Invariant violations seen on any fit or simulation in this suite.
    static VIOLATIONS: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
    static CHECKED: RefCell<usize> = const { RefCell::new(0) };
}

fn audit_fit(label: &str, fit: &DccFit) {
    CHECKED.with(|c| *c.borrow_mut() += 1);
    if let Some(v) = fit_violation(fit) {
        VIOLATIONS.with(|s| s.borrow_mut().push(format!("{label}: {v}")));
    }
}

fn audit_sim(label: &str, spec: &DgpSpec) -> dcc_lab::simulate::Simulation {
    let sim = dcc_lab::simulate::simulate_with_paths(spec).unwrap();
    CHECKED.with(|c| *c.borrow_mut() += 1);
    if let Some(v) = path_violation(&sim.correlations) {
        VIOLATIONS.with(|s| s.borrow_mut().push(format!("{label}: {v}")));
    }
    sim
}

fn accept(label: &str, r: dcc_lab::Result<DccFit>) -> DccFit {
    let fit = match r {
        Ok(f) => f,
        Err(dcc_lab::Error::DccNotConverged(best)) => *best,
        Err(e) => panic!("{label}: {e}"),
    };
    audit_fit(label, &fit);
    fit
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c1_jarque_bera() -> Outcome {
    let (gold, _) = jarque_bera(1134, 0.2312, 5.6593);
    let (bond, _) = jarque_bera(1134, -0.0559, 4.0056);
    verdict(
        (gold - 344.257).abs() <= 0.5 && (bond - 48.37).abs() <= 0.1,
        format!("JB = {gold:.4} and {bond:.4}"),
    )
}

fn c2_recursion_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut draws = 0;
    let mut worst: f64 = 0.0;
    while draws < 50 {
        let alphas = vec![rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)];
        let beta = rng.random_range(0.0..0.95);
        let rho = rng.random_range(-0.9..0.9);
        let Ok(params) = DccParams::new(alphas, beta, matrix(2, &[1.0, rho, rho, 1.0])) else {
            continue;
        };
        let eps = DMatrix::from_fn(5, 2, |_, _| StandardNormal.sample(&mut rng));
        let path = dcc_recursion(&eps, &params).unwrap();
        for (t, r) in brute_force_path(&eps, &params.alphas, params.beta, &params.q_bar).iter().enumerate() {
            worst = worst.max(max_abs_diff(&path.matrix(t), r));
        }
        draws += 1;
    }
    verdict(worst <= 1e-12, format!("{draws} draws, max |diff| = {worst:.2e}"))
}

/// Tied-alpha optimum found directly on the generalized likelihood, in the
/// raw `(alpha, beta)` coordinates.
fn tied_generalized_optimum(eps: &DMatrix<f64>, q_bar: &DMatrix<f64>, start: [f64; 2]) -> [f64; 2] {
    let n = eps.ncols();
    let objective = |x: &[f64]| match DccParams::new(vec![x[0]; n], x[1], q_bar.clone()) {
        Ok(p) => dcc_loglik(eps, &p).map(|ll| -ll).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let opts = NelderMeadOptions {
        tol_f: 1e-14,
        tol_x: 1e-10,
        max_iter: 20_000,
    };
    let r = nelder_mead(objective, &start, &opts).unwrap();
    [r.point[0], r.point[1]]
}

fn c3_scalar_special_case() -> Outcome {
    let sim = audit_sim("c3 simulation", &two_asset_spec([0.2, 0.2], 0.85, 0.3, 1500, 31));
    let mut spec3 = recovery_spec(1500, 32);
    spec3.dcc.alphas = vec![0.22; 4];
    let sim4 = audit_sim("c3 simulation", &spec3);

    let mut path_diff: f64 = 0.0;
    let mut fit_diff: f64 = 0.0;
    for shocks in [&sim.shocks, &sim4.shocks] {
        let n = shocks.ncols();
        let q_bar = dcc_lab::dcc::correlation_targeting(shocks).unwrap();
        let tied = DccParams::new(vec![0.22; n], 0.8, q_bar.clone()).unwrap();
        let general = dcc_recursion(shocks, &tied).unwrap();
        let scalar = scalar_dcc_recursion(shocks, &q_bar, 0.22, 0.8).unwrap();
        for t in 0..general.len() {
            path_diff = path_diff.max(max_abs_diff(&general.matrix(t), &scalar.matrix(t)));
        }

        let fit = accept("c3 scalar fit", fit_dcc(shocks, DccMode::Scalar));
        let direct = tied_generalized_optimum(shocks, &q_bar, [0.1, 0.7]);
        fit_diff = fit_diff
            .max((fit.params.alphas[0] - direct[0]).abs())
            .max((fit.params.beta - direct[1]).abs());
    }
    verdict(
        path_diff <= 1e-12 && fit_diff <= 1e-6,
        format!("path max |diff| = {path_diff:.2e}, optimum max |diff| = {fit_diff:.2e}"),
    )
}

fn c4_parameter_recovery() -> Outcome {
    let truth = [0.20, 0.25, 0.30, 0.10];
    let mut hits = 0;
    let mut worst_a: f64 = 0.0;
    let mut worst_b: f64 = 0.0;
    for seed in 1000..1010u64 {
        let sim = audit_sim("c4 simulation", &recovery_spec(3000, seed));
        let (_, eps) = first_stage(sim.panel.returns());
        let fit = accept("c4 fit", fit_dcc(&eps, DccMode::Generalized));
        let da = fit.params.alphas.iter().zip(truth).map(|(a, t)| (a - t).abs()).fold(0.0, f64::max);
        let db = (fit.params.beta - 0.85).abs();
        worst_a = worst_a.max(da);
        worst_b = worst_b.max(db);
        if da <= 0.07 && db <= 0.05 {
            hits += 1;
        }
    }
    verdict(
        hits >= 8,
        format!("{hits}/10 seeds within tolerance (worst |da| = {worst_a:.4}, |db| = {worst_b:.4})"),
    )
}

fn c5_invariants() -> Outcome {
    // Extra fits on the pipeline path (with real GARCH standardization) and
    // at a near-boundary configuration.
    let sim = audit_sim("c5 simulation", &two_asset_spec([0.25, 0.05], 0.9, -0.5, 2000, 55));
    let panel = sim.panel.clone();
    let fits = garch_fits(panel.returns());
    let eps = standardized_residuals(&panel, &fits).unwrap();
    accept("c5 generalized", fit_dcc(&eps, DccMode::Generalized));
    accept("c5 scalar", fit_dcc(&eps, DccMode::Scalar));
    let sim = audit_sim("c5 simulation", &two_asset_spec([0.0, 0.0], 0.0, 0.6, 1000, 56));
    accept("c5 zero news", fit_dcc(&sim.shocks, DccMode::Generalized));

    let checked = CHECKED.with(|c| *c.borrow());
    let violations = VIOLATIONS.with(|v| v.borrow().clone());
    verdict(
        violations.is_empty(),
        if violations.is_empty() {
            format!("{checked} fits and simulations audited")
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    )
}

fn c6_implied_news() -> Outcome {
    let params = DccParams::new(vec![0.233, 0.239, 0.289, 0.133], 0.866, DMatrix::identity(4, 4)).unwrap();
    let news = implied_news_matrix(&params);
    let got = [news[(0, 3)], news[(1, 3)], news[(2, 3)]];
    let ok = got.iter().zip([0.031, 0.032, 0.038]).all(|(g, e)| (g - e).abs() <= 0.0005);
    verdict(ok, format!("news = ({:.6}, {:.6}, {:.6})", got[0], got[1], got[2]))
}

fn numerical_gradient(r: &[f64], p: &GarchParams) -> [f64; 3] {
    let x = [p.omega, p.a, p.b];
    let mut g = [0.0; 3];
    for k in 0..3 {
        let h = 1e-6 * x[k].abs().max(1e-3);
        let mut up = x;
        let mut down = x;
        up[k] += h;
        down[k] -= h;
        let f = |v: [f64; 3]| garch_loglik(r, &GarchParams { omega: v[0], a: v[1], b: v[2] }).unwrap();
        g[k] = (f(up) - f(down)) / (2.0 * h);
    }
    g
}

fn c7_garch_sanity() -> Outcome {
    let truth = GarchParams::new(0.1, 0.1, 0.8).unwrap();
    let dcc = DccParams::new(vec![0.0], 0.0, matrix(1, &[1.0])).unwrap();
    let t = 5000;
    let mut hits = 0;
    let mut worst_grad: f64 = 0.0;
    for seed in 0..10u64 {
        let sim = audit_sim("c7 simulation", &DgpSpec::new(vec![truth], &dcc, t, 7000 + seed));
        let fit = &garch_fits(sim.panel.returns())[0];
        let p = fit.params;
        if (p.omega - 0.1).abs() <= 0.05 && (p.a - 0.1).abs() <= 0.05 && (p.b - 0.8).abs() <= 0.05 {
            hits += 1;
        }
        let demeaned: Vec<f64> = sim.panel.column(0).iter().map(|x| x - fit.mean).collect();
        let g = numerical_gradient(&demeaned, &p);
        worst_grad = g.iter().fold(worst_grad, |m, v| m.max(v.abs()));
    }
    let bound = 1e-3 * t as f64;
    verdict(
        hits >= 8 && worst_grad < bound,
        format!("{hits}/10 seeds within tolerance, max |gradient| = {worst_grad:.3e} (bound {bound})"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> i32 {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap().status.code().unwrap()
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = recovery_spec(800, 81);
    spec.assets = Some(["BTC", "XRP", "DASH", "XMR"].iter().map(|s| s.to_string()).collect());
    fs::write(dir.path().join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let steps: [&[&str]; 5] = [
        &["simulate", "--spec", "spec.json", "--output", "r.csv", "--metadata", "meta.json"],
        &["describe", "--input", "r.csv", "--input-kind", "returns", "--output", "d.csv"],
        &["fit-garch", "--input", "r.csv", "--input-kind", "returns", "--output", "g.json", "--variance-out", "h.csv"],
        &["fit-dcc", "--input", "r.csv", "--input-kind", "returns", "--output", "f.json"],
        &[
            "correlations", "--input", "r.csv", "--input-kind", "returns", "--output", "c.csv", "--summary-out",
            "s.csv", "--matrix-out", "m.csv",
        ],
    ];
    let files = ["r.csv", "meta.json", "d.csv", "g.json", "h.csv", "f.json", "c.csv", "s.csv", "m.csv"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        for s in steps {
            let code = cli(dir.path(), s);
            if code != 0 {
                return Outcome::Fail(format!("`{}` exited with {code}", s[0]));
            }
        }
        runs.push(files.map(|f| fs::read(dir.path().join(f)).unwrap()));
    }
    verdict(runs[0] == runs[1], format!("{} outputs compared across two runs", files.len()))
}

fn c9_replication() -> Outcome {
    let Ok(path) = std::env::var(REPLICATION_ENV) else {
        return Outcome::Skip(format!("non-gating; set {REPLICATION_ENV} to a BTC,XRP,DASH,XMR price CSV"));
    };
    let run = || -> dcc_lab::Result<(Vec<(String, f64, f64)>, bool)> {
        let prices = load_price_csv(&path, &CsvOptions::default())?;
        let names: Vec<String> = ["BTC", "XRP", "DASH", "XMR"].iter().map(|s| s.to_string()).collect();
        let panel = log_returns(&prices, 100.0)?.select(&names)?;
        let fits = garch_fits(panel.returns());
        let eps = standardized_residuals(&panel, &fits)?;
        let fit = accept("c9 fit", fit_dcc(&eps, DccMode::Generalized));
        let mut rows = Vec::new();
        for (i, j) in dcc_lab::dcc::all_pairs(4) {
            let s = describe(&pairwise_series(&fit.correlation_path, i, j)?.values)?;
            rows.push((format!("{}-{}", names[i], names[j]), s.mean, s.std_dev));
        }
        let btc_xmr = rows.iter().find(|r| r.0 == "BTC-XMR").unwrap().2;
        let most_stable = rows.iter().all(|r| r.2 >= btc_xmr);
        Ok((rows, most_stable))
    };
    match run() {
        Ok((rows, most_stable)) => {
            let in_band = rows.iter().all(|r| (0.10..=0.40).contains(&r.1));
            let detail = rows.iter().map(|r| format!("{} {:.4}/{:.4}", r.0, r.1, r.2)).collect::<Vec<_>>().join(", ");
            verdict(in_band && most_stable, format!("non-gating; {detail}"))
        }
        Err(e) => Outcome::Fail(format!("non-gating; {e}")),
    }
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, gating: bool, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                if gating {
                    failed.push(id);
                }
                ("FAIL", d)
            }
        };
        println!("criterion {id} [{tag}] {name}: {detail} ({secs:.2}s)");
    };

    let s = Instant::now();
    report(1, "Jarque-Bera from tabulated moments", true, s, c1_jarque_bera());
    let s = Instant::now();
    report(2, "recursion vs brute-force oracle", true, s, c2_recursion_oracle());
    let s = Instant::now();
    report(3, "scalar special case (path and fit)", true, s, c3_scalar_special_case());
    let s = Instant::now();
    report(4, "two-step parameter recovery", true, s, c4_parameter_recovery());
    let s = Instant::now();
    report(6, "implied news parameters", true, s, c6_implied_news());
    let s = Instant::now();
    report(7, "GARCH fit sanity", true, s, c7_garch_sanity());
    let s = Instant::now();
    report(8, "CLI determinism", true, s, c8_determinism());
    let s = Instant::now();
    report(9, "replication band", false, s, c9_replication());
    // Runs last so it audits every fit and simulation above.
    let s = Instant::now();
    report(5, "correlation-path and intercept invariants", true, s, c5_invariants());

    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
