//! Univariate GARCH(1,1) filtering and Gaussian quasi-maximum likelihood.
//!
//! Variance recursion: `h[t] = omega + a * r[t-1]^2 + b * h[t-1]`, started at
//! the unconditional variance `omega / (1 - a - b)`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, quadratic_penalty, restarted_fit, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const MIN_OBSERVATIONS: usize = 50;
const RECOMMENDED_OBSERVATIONS: usize = 250;
/// Fitted `a + b` must stay this far below one.
const STATIONARITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
}

impl GarchParams {
    pub fn new(omega: f64, a: f64, b: f64) -> Result<Self> {
        let p = Self { omega, a, b };
        p.validate()?;
        Ok(p)
    }

    /// Checks `omega > 0`, `a, b >= 0` and `a + b < 1`.
    pub fn validate(&self) -> Result<()> {
        self.check_signs()?;
        if self.a + self.b >= 1.0 {
            return Err(Error::Stationarity(format!(
                "a + b = {} must be below 1",
                self.a + self.b
            )));
        }
        Ok(())
    }

    fn check_signs(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::validation(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::validation(format!(
                "a and b must be non-negative, got a={} b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }

    pub fn persistence(&self) -> f64 {
        self.a + self.b
    }

    pub fn unconditional_variance(&self) -> Option<f64> {
        let d = 1.0 - self.a - self.b;
        (d > 0.0).then(|| self.omega / d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialVariance {
    /// `omega / (1 - a - b)`.
    Unconditional,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GarchFit {
    pub params: GarchParams,
    /// Sample mean removed before fitting.
    pub mean: f64,
    pub variance_path: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Conditional variance path of `returns` under `params`.
pub fn garch_filter(returns: &[f64], params: &GarchParams, init: InitialVariance) -> Result<Vec<f64>> {
    if returns.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    params.check_signs()?;
    let h1 = match init {
        InitialVariance::Unconditional => {
            params.validate()?;
            params.unconditional_variance().unwrap()
        }
        InitialVariance::Fixed(h) if h > 0.0 && h.is_finite() => h,
        InitialVariance::Fixed(h) => {
            return Err(Error::validation(format!("initial variance must be positive, got {h}")))
        }
    };
    let mut h = Vec::with_capacity(returns.len());
    h.push(h1);
    for t in 1..returns.len() {
        let r = returns[t - 1];
        h.push(params.omega + params.a * r * r + params.b * h[t - 1]);
    }
    Ok(h)
}

fn loglik_from_path(returns: &[f64], h: &[f64]) -> f64 {
    -0.5 * returns
        .iter()
        .zip(h)
        .map(|(r, h)| LN_2PI + h.ln() + r * r / h)
        .sum::<f64>()
}

/// Gaussian log-likelihood, variance started at the unconditional level.
pub fn garch_loglik(returns: &[f64], params: &GarchParams) -> Result<f64> {
    garch_loglik_with(returns, params, InitialVariance::Unconditional)
}

pub fn garch_loglik_with(returns: &[f64], params: &GarchParams, init: InitialVariance) -> Result<f64> {
    let h = garch_filter(returns, params, init)?;
    Ok(loglik_from_path(returns, &h))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GarchOptions {
    pub optim: NelderMeadOptions,
}

/// Negative log-likelihood in the search space `(ln omega, a, b)`.
///
/// Sign violations are evaluated at the clamped point plus a quadratic
/// penalty; non-stationary points start the recursion at the sample variance.
fn objective(x: &[f64], r: &[f64], sample_var: f64) -> f64 {
    let omega = x[0].exp();
    let (a, b) = (x[1].max(0.0), x[2].max(0.0));
    let penalty = quadratic_penalty(-x[1])
        + quadratic_penalty(-x[2])
        + quadratic_penalty(x[1] + x[2] - (1.0 - STATIONARITY_MARGIN));
    let p = GarchParams { omega, a, b };
    let init = if a + b < 1.0 {
        InitialVariance::Unconditional
    } else {
        InitialVariance::Fixed(sample_var)
    };
    match garch_filter(r, &p, init) {
        Ok(h) => -loglik_from_path(r, &h) + penalty,
        Err(_) => f64::INFINITY,
    }
}

pub fn fit_garch(returns: &[f64]) -> Result<GarchFit> {
    fit_garch_with(returns, &GarchOptions::default())
}

/// Demeans the series and maximizes the Gaussian likelihood.
///
/// A run that stops on the iteration limit or at the stationarity boundary
/// returns [`Error::GarchNotConverged`] carrying the best point found.
pub fn fit_garch_with(returns: &[f64], opts: &GarchOptions) -> Result<GarchFit> {
    let n = returns.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_OBSERVATIONS,
            got: n,
        });
    }
    if returns.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("returns contain non-finite values"));
    }
    if n < RECOMMENDED_OBSERVATIONS {
        warn!("fitting GARCH(1,1) on only {n} observations");
    }
    let mu = mean(returns);
    let r: Vec<f64> = returns.iter().map(|x| x - mu).collect();
    let var = population_variance(&r);
    if !(var > 0.0) {
        return Err(Error::validation("zero-variance series cannot be fitted"));
    }

    let f = |x: &[f64]| objective(x, &r, var);
    let starts = vec![
        vec![(0.05 * var).ln(), 0.05, 0.90],
        vec![(0.2 * var).ln(), 0.10, 0.70],
    ];
    let first = restarted_fit(f, &starts, &opts.optim)?;
    let polish = nelder_mead(f, &first.point, &opts.optim)?;
    let iterations = first.iterations + polish.iterations;
    let best = if polish.value <= first.value { polish } else { first };

    let x = &best.point;
    let params = GarchParams {
        omega: x[0].exp(),
        a: x[1].max(0.0),
        b: x[2].max(0.0),
    };
    let stationary = params.persistence() < 1.0 - STATIONARITY_MARGIN / 2.0;
    let init = if stationary {
        InitialVariance::Unconditional
    } else {
        InitialVariance::Fixed(var)
    };
    let variance_path = garch_filter(&r, &params, init)?;
    let fit = GarchFit {
        params,
        mean: mu,
        log_likelihood: loglik_from_path(&r, &variance_path),
        variance_path,
        converged: best.converged && stationary,
        iterations,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::GarchNotConverged(Box::new(fit)))
    }
}

/// Fits every column independently, using up to `threads` worker threads.
pub fn fit_garch_panel(returns: &DMatrix<f64>, opts: &GarchOptions, threads: usize) -> Vec<Result<GarchFit>> {
    let columns: Vec<Vec<f64>> = (0..returns.ncols())
        .map(|i| returns.column(i).iter().copied().collect())
        .collect();
    let threads = threads.max(1).min(columns.len().max(1));
    if threads == 1 {
        return columns.iter().map(|c| fit_garch_with(c, opts)).collect();
    }
    let mut out: Vec<Option<Result<GarchFit>>> = (0..columns.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = columns.len().div_ceil(threads);
        for (cols, slots) in columns.chunks(chunk).zip(out.chunks_mut(chunk)) {
            s.spawn(move || {
                for (c, slot) in cols.iter().zip(slots.iter_mut()) {
                    *slot = Some(fit_garch_with(c, opts));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("every column fitted")).collect()
}

/// `eps[t,i] = r[t,i] / sqrt(h[t,i])`.
pub fn standardize(returns: &DMatrix<f64>, variances: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if returns.shape() != variances.shape() {
        return Err(Error::validation(format!(
            "returns are {:?} but variances are {:?}",
            returns.shape(),
            variances.shape()
        )));
    }
    if let Some(h) = variances.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::validation(format!("non-positive variance {h}")));
    }
    Ok(returns.zip_map(variances, |r, h| r / h.sqrt()))
}
