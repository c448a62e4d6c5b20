#![allow(dead_code)]

use dcc_lab::dcc::{check_intercept_psd, CorrelationPath, DccFit, DccParams, INTERCEPT_PSD_TOL};
use dcc_lab::garch::{fit_garch, GarchFit, GarchParams};
use dcc_lab::linalg::cholesky_in_place;
use dcc_lab::simulate::{simulate_with_paths, DgpSpec, Simulation};
use nalgebra::DMatrix;

pub fn matrix(n: usize, rows: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, rows)
}

/// Target used by the four-asset recovery experiments.
pub fn recovery_q_bar() -> DMatrix<f64> {
    matrix(
        4,
        &[
            1.0, 0.2, 0.25, 0.3, //
            0.2, 1.0, 0.2, 0.15, //
            0.25, 0.2, 1.0, 0.2, //
            0.3, 0.15, 0.2, 1.0,
        ],
    )
}

pub fn recovery_spec(t: usize, seed: u64) -> DgpSpec {
    let dcc = DccParams::new(vec![0.20, 0.25, 0.30, 0.10], 0.85, recovery_q_bar()).unwrap();
    let g = GarchParams::new(0.1, 0.1, 0.8).unwrap();
    DgpSpec::new(vec![g; 4], &dcc, t, seed)
}

pub fn two_asset_spec(alphas: [f64; 2], beta: f64, rho: f64, t: usize, seed: u64) -> DgpSpec {
    let dcc = DccParams::new(alphas.to_vec(), beta, matrix(2, &[1.0, rho, rho, 1.0])).unwrap();
    let g = GarchParams::new(0.1, 0.1, 0.8).unwrap();
    DgpSpec::new(vec![g, g], &dcc, t, seed)
}

/// Straight triple loop over the generalized recursion, kept free of any
/// library helper so it can serve as an oracle.
pub fn brute_force_path(eps: &DMatrix<f64>, alphas: &[f64], beta: f64, q_bar: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let n = alphas.len();
    let mut q = q_bar.clone();
    let mut out = Vec::new();
    for t in 0..eps.nrows() {
        if t > 0 {
            let mut next = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let w = alphas[i] * alphas[j];
                    next[(i, j)] = q_bar[(i, j)] * (1.0 - w - beta)
                        + w * eps[(t - 1, i)] * eps[(t - 1, j)]
                        + beta * q[(i, j)];
                }
            }
            q = next;
        }
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = q[(i, j)] / (q[(i, i)].sqrt() * q[(j, j)].sqrt());
            }
        }
        out.push(r);
    }
    out
}

/// Checks unit diagonal (bitwise), |rho| <= 1 and a successful Cholesky
/// factorization at every date. Returns a description of the first failure.
pub fn path_violation(path: &CorrelationPath) -> Option<String> {
    let n = path.dim();
    let mut buf = vec![0.0; n * n];
    for t in 0..path.len() {
        let r = path.raw(t);
        for i in 0..n {
            if r[i * n + i] != 1.0 {
                return Some(format!("diagonal {} at t={t}", r[i * n + i]));
            }
            for j in 0..n {
                if r[i * n + j].abs() > 1.0 || r[i * n + j] != r[j * n + i] {
                    return Some(format!("entry ({i},{j}) = {} at t={t}", r[i * n + j]));
                }
            }
        }
        buf.copy_from_slice(r);
        if !cholesky_in_place(&mut buf, n) {
            return Some(format!("factorization failed at t={t}"));
        }
    }
    None
}

pub fn fit_violation(fit: &DccFit) -> Option<String> {
    if let Some(v) = path_violation(&fit.correlation_path) {
        return Some(v);
    }
    let check = check_intercept_psd(&fit.params);
    if check.min_eigenvalue < INTERCEPT_PSD_TOL {
        return Some(format!("intercept min eigenvalue {}", check.min_eigenvalue));
    }
    None
}

pub fn simulate(spec: &DgpSpec) -> Simulation {
    let sim = simulate_with_paths(spec).unwrap();
    assert_eq!(path_violation(&sim.correlations), None);
    sim
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// GARCH fits per column, keeping best-so-far points when not converged.
pub fn garch_fits(r: &DMatrix<f64>) -> Vec<GarchFit> {
    (0..r.ncols())
        .map(|i| {
            let col: Vec<f64> = r.column(i).iter().copied().collect();
            match fit_garch(&col) {
                Ok(f) => f,
                Err(dcc_lab::Error::GarchNotConverged(best)) => *best,
                Err(e) => panic!("garch fit failed: {e}"),
            }
        })
        .collect()
}

/// Standardized residuals from the two-step first stage.
pub fn first_stage(r: &DMatrix<f64>) -> (Vec<GarchFit>, DMatrix<f64>) {
    let fits = garch_fits(r);
    let eps = DMatrix::from_fn(r.nrows(), r.ncols(), |t, i| {
        (r[(t, i)] - fits[i].mean) / fits[i].variance_path[t].sqrt()
    });
    (fits, eps)
}

/// Two-step fit that accepts a best-so-far result.
pub fn fit_or_best(eps: &DMatrix<f64>, mode: dcc_lab::dcc::DccMode) -> DccFit {
    match dcc_lab::dcc::fit_dcc(eps, mode) {
        Ok(f) => f,
        Err(dcc_lab::Error::DccNotConverged(best)) => *best,
        Err(e) => panic!("dcc fit failed: {e}"),
    }
}
