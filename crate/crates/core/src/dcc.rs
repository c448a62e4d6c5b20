//! Generalized dynamic conditional correlation.
//!
//! With `A = diag(alpha)` the pseudo-correlation recursion is
//!
//! ```text
//! Q[t] = (Qbar - A Qbar A - beta Qbar) + A e[t-1] e[t-1]' A + beta Q[t-1]
//! R[t] = diag(Q[t])^{-1/2} Q[t] diag(Q[t])^{-1/2}
//! ```
//!
//! so pair `(i, j)` reacts to news with weight `alpha_i * alpha_j`. The scalar
//! model is the special case where every `alpha_i` is equal. `Qbar` is fixed
//! by correlation targeting and `Q[1] = Qbar`.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, logdet_and_quad, min_eigenvalue, to_dmatrix};
use crate::optimize::{logistic, logit, nelder_mead, restarted_fit, NelderMeadOptions};

/// Tolerance below zero accepted for the intercept's smallest eigenvalue.
pub const INTERCEPT_PSD_TOL: f64 = -1e-10;
/// Distance to `max alpha_i^2 + beta = 1` under which a fit is flagged.
pub const BOUNDARY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DccMode {
    /// One news parameter shared by all assets.
    Scalar,
    /// One news parameter per asset.
    Generalized,
}

impl std::str::FromStr for DccMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "scalar" => Ok(DccMode::Scalar),
            "generalized" => Ok(DccMode::Generalized),
            other => Err(format!("unknown dcc mode `{other}` (expected scalar or generalized)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DccParams {
    /// Diagonal of the news matrix `A`.
    pub alphas: Vec<f64>,
    pub beta: f64,
    pub q_bar: DMatrix<f64>,
}

impl DccParams {
    pub fn new(alphas: Vec<f64>, beta: f64, q_bar: DMatrix<f64>) -> Result<Self> {
        let p = Self { alphas, beta, q_bar };
        p.validate()?;
        Ok(p)
    }

    pub fn scalar(alpha: f64, beta: f64, q_bar: DMatrix<f64>) -> Result<Self> {
        let n = q_bar.nrows();
        Self::new(vec![alpha; n], beta, q_bar)
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    /// `max_i alpha_i^2 + beta`, which must stay below one.
    pub fn persistence(&self) -> f64 {
        self.alphas.iter().map(|a| a * a).fold(0.0, f64::max) + self.beta
    }

    /// Checks every parameter invariant: non-negativity, stationarity, a
    /// symmetric positive definite unit-diagonal target and a positive
    /// semidefinite intercept.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::validation("dcc params need at least one asset"));
        }
        if self.q_bar.shape() != (n, n) {
            return Err(Error::validation(format!(
                "q_bar is {:?} but there are {n} alphas",
                self.q_bar.shape()
            )));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::validation(format!("alphas must be non-negative: {:?}", self.alphas)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::validation(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.persistence() >= 1.0 {
            return Err(Error::Stationarity(format!(
                "max alpha^2 + beta = {} must be below 1",
                self.persistence()
            )));
        }
        for i in 0..n {
            if self.q_bar[(i, i)] != 1.0 {
                return Err(Error::validation("q_bar must have a unit diagonal"));
            }
            for j in 0..i {
                if (self.q_bar[(i, j)] - self.q_bar[(j, i)]).abs() > 1e-12 {
                    return Err(Error::validation("q_bar must be symmetric"));
                }
            }
        }
        if !crate::linalg::is_positive_definite(&self.q_bar) {
            return Err(Error::Degenerate("q_bar is not positive definite".into()));
        }
        let check = check_intercept_psd(self);
        if !check.psd {
            return Err(Error::validation(format!(
                "intercept matrix is not positive semidefinite (min eigenvalue {})",
                check.min_eigenvalue
            )));
        }
        Ok(())
    }

    /// `Qbar - A Qbar A - beta Qbar`, elementwise `qbar_ij (1 - alpha_i alpha_j - beta)`.
    pub fn intercept_matrix(&self) -> DMatrix<f64> {
        let n = self.q_bar.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            self.q_bar[(i, j)] * (1.0 - self.alphas[i] * self.alphas[j] - self.beta)
        })
    }
}

/// Time path of conditional correlation matrices, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPath {
    dates: Vec<NaiveDate>,
    dim: usize,
    data: Vec<f64>,
}

impl CorrelationPath {
    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && data.len() % (dim * dim) == 0);
        Self {
            dates: Vec::new(),
            dim,
            data,
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / (self.dim * self.dim)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dates attached with [`CorrelationPath::with_dates`]; empty otherwise.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn with_dates(mut self, dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.len() != self.len() {
            return Err(Error::validation(format!(
                "{} dates for a path of length {}",
                dates.len(),
                self.len()
            )));
        }
        self.dates = dates;
        Ok(self)
    }

    /// Row-major entries of `R[t]`.
    pub fn raw(&self, t: usize) -> &[f64] {
        let k = self.dim * self.dim;
        &self.data[t * k..(t + 1) * k]
    }

    pub fn matrix(&self, t: usize) -> DMatrix<f64> {
        to_dmatrix(self.raw(t), self.dim)
    }

    pub fn rho(&self, t: usize, i: usize, j: usize) -> f64 {
        self.raw(t)[i * self.dim + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = DMatrix<f64>> + '_ {
        (0..self.len()).map(|t| self.matrix(t))
    }

    /// Entrywise time average of `R[t]`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mut acc = vec![0.0; n * n];
        for t in 0..self.len() {
            for (a, r) in acc.iter_mut().zip(self.raw(t)) {
                *a += r;
            }
        }
        let len = self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= len);
        for i in 0..n {
            acc[i * n + i] = 1.0;
        }
        to_dmatrix(&acc, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DccFit {
    pub params: DccParams,
    pub correlation_path: CorrelationPath,
    pub log_likelihood: f64,
    pub mode: DccMode,
    pub converged: bool,
    pub iterations: usize,
    pub intercept_min_eigenvalue: f64,
    /// Set when the optimum is at the stationarity boundary.
    pub warning: Option<String>,
}

fn check_eps(eps: &DMatrix<f64>) -> Result<()> {
    if eps.ncols() == 0 {
        return Err(Error::validation("standardized returns have no columns"));
    }
    if eps.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("standardized returns contain non-finite values"));
    }
    Ok(())
}

/// Sample second moment of `eps`, rescaled to a unit diagonal.
///
/// Perfectly collinear columns yield a singular (but valid PSD) target;
/// such a target is rejected later by [`DccParams::validate`]. A column with
/// zero second moment cannot be rescaled and is a degeneracy error.
pub fn correlation_targeting(eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let (t, n) = eps.shape();
    if t <= n {
        return Err(Error::InsufficientData { needed: n + 1, got: t });
    }
    let s = (eps.transpose() * eps) / t as f64;
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Degenerate(format!("column {i} has zero second moment")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (s[(i, j)] / (d[i].sqrt() * d[j].sqrt())).clamp(-1.0, 1.0)
        }
    }))
}

/// Runs the recursion, calling `visit(t, q, r)` with row-major `Q[t]`, `R[t]`.
fn recurse<F>(eps: &DMatrix<f64>, params: &DccParams, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<()>,
{
    let (len, n) = eps.shape();
    let a = &params.alphas;
    let beta = params.beta;
    let intercept: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            params.q_bar[(i, j)] * (1.0 - a[i] * a[j] - beta)
        })
        .collect();
    let mut q: Vec<f64> = (0..n * n).map(|k| params.q_bar[(k / n, k % n)]).collect();
    let mut r = vec![0.0; n * n];
    let mut scale = vec![0.0; n];
    let mut news = vec![0.0; n];

    for t in 0..len {
        if t > 0 {
            for i in 0..n {
                news[i] = a[i] * eps[(t - 1, i)];
            }
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    q[k] = intercept[k] + news[i] * news[j] + beta * q[k];
                }
            }
        }
        for i in 0..n {
            let d = q[i * n + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Degenerate(format!("q[{i},{i}] = {d} at t = {t}")));
            }
            scale[i] = d.sqrt();
        }
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = if i == j {
                    1.0
                } else {
                    (q[i * n + j] / (scale[i] * scale[j])).clamp(-1.0, 1.0)
                };
            }
        }
        visit(t, &q, &r)?;
    }
    Ok(())
}

pub fn dcc_recursion(eps: &DMatrix<f64>, params: &DccParams) -> Result<CorrelationPath> {
    check_eps(eps)?;
    params.validate()?;
    if eps.ncols() != params.dim() {
        return Err(Error::validation(format!(
            "{} columns but {} alphas",
            eps.ncols(),
            params.dim()
        )));
    }
    let n = params.dim();
    let mut data = Vec::with_capacity(eps.nrows() * n * n);
    recurse(eps, params, |_, _, r| {
        data.extend_from_slice(r);
        Ok(())
    })?;
    Ok(CorrelationPath {
        dates: Vec::new(),
        dim: n,
        data,
    })
}

/// The unnormalized `Q[t]` path.
pub fn q_path(eps: &DMatrix<f64>, params: &DccParams) -> Result<Vec<DMatrix<f64>>> {
    check_eps(eps)?;
    params.validate()?;
    let n = params.dim();
    let mut out = Vec::with_capacity(eps.nrows());
    recurse(eps, params, |_, q, _| {
        out.push(to_dmatrix(q, n));
        Ok(())
    })?;
    Ok(out)
}

/// Scalar recursion `Q[t] = (1 - alpha^2 - beta) Qbar + alpha^2 e e' + beta Q[t-1]`
/// written with whole-matrix operations.
pub fn scalar_dcc_recursion(
    eps: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<CorrelationPath> {
    let params = DccParams::scalar(alpha, beta, q_bar.clone())?;
    check_eps(eps)?;
    let n = params.dim();
    let news = alpha * alpha;
    let intercept = q_bar * (1.0 - news - beta);
    let mut q = q_bar.clone();
    let mut data = Vec::with_capacity(eps.nrows() * n * n);
    for t in 0..eps.nrows() {
        if t > 0 {
            let e: DVector<f64> = eps.row(t - 1).transpose();
            q = &intercept + (&e * e.transpose()) * news + &q * beta;
        }
        let diag = q.diagonal();
        if diag.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Degenerate(format!("non-positive diagonal of Q at t = {t}")));
        }
        let inv_sqrt = diag.map(|d| 1.0 / d.sqrt());
        let mut r = DMatrix::from_fn(n, n, |i, j| (q[(i, j)] * inv_sqrt[i] * inv_sqrt[j]).clamp(-1.0, 1.0));
        r.fill_diagonal(1.0);
        for i in 0..n {
            for j in 0..n {
                data.push(r[(i, j)]);
            }
        }
    }
    Ok(CorrelationPath {
        dates: Vec::new(),
        dim: n,
        data,
    })
}

/// Pairwise news weights `alpha_i * alpha_j`.
pub fn implied_news_matrix(params: &DccParams) -> DMatrix<f64> {
    let a = &params.alphas;
    DMatrix::from_fn(a.len(), a.len(), |i, j| a[i] * a[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterceptCheck {
    pub psd: bool,
    pub min_eigenvalue: f64,
}

/// Eigenvalue diagnostic of the recursion intercept. Does not require the
/// other parameter invariants to hold.
pub fn check_intercept_psd(params: &DccParams) -> InterceptCheck {
    let min_eigenvalue = min_eigenvalue(&params.intercept_matrix());
    InterceptCheck {
        psd: min_eigenvalue >= INTERCEPT_PSD_TOL,
        min_eigenvalue,
    }
}

fn loglik_unchecked(eps: &DMatrix<f64>, params: &DccParams) -> Result<f64> {
    let n = params.dim();
    let mut l = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut total = 0.0;
    recurse(eps, params, |t, _, r| {
        l.copy_from_slice(r);
        if !cholesky_in_place(&mut l, n) {
            return Err(Error::Degenerate(format!("R[t] is not positive definite at t = {t}")));
        }
        for i in 0..n {
            e[i] = eps[(t, i)];
        }
        let (logdet, quad) = logdet_and_quad(&l, n, &e, &mut work);
        let ee: f64 = e.iter().map(|x| x * x).sum();
        total += logdet + quad - ee;
        Ok(())
    })?;
    Ok(-0.5 * total)
}

/// Correlation-stage quasi log-likelihood
/// `-1/2 sum_t [ln det R[t] + e[t]' R[t]^-1 e[t] - e[t]' e[t]]`.
pub fn dcc_loglik(eps: &DMatrix<f64>, params: &DccParams) -> Result<f64> {
    check_eps(eps)?;
    params.validate()?;
    if eps.nrows() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: eps.nrows() });
    }
    if eps.ncols() != params.dim() {
        return Err(Error::validation(format!(
            "{} columns but {} alphas",
            eps.ncols(),
            params.dim()
        )));
    }
    loglik_unchecked(eps, params)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DccOptions {
    pub optim: NelderMeadOptions,
}

/// Maps search coordinates to `(alphas, beta)`: `beta = s(y)`,
/// `alpha_i = s(x_i) * sqrt(1 - beta)`, so `max alpha_i^2 + beta < 1` always.
#[derive(Debug, Clone, Copy)]
struct Layout {
    mode: DccMode,
    n: usize,
}

impl Layout {
    fn len(&self) -> usize {
        match self.mode {
            DccMode::Scalar => 2,
            DccMode::Generalized => self.n + 1,
        }
    }

    fn decode(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let beta = logistic(x[x.len() - 1]);
        let room = (1.0 - beta).sqrt();
        let alphas = match self.mode {
            DccMode::Scalar => vec![logistic(x[0]) * room; self.n],
            DccMode::Generalized => x[..self.n].iter().map(|xi| logistic(*xi) * room).collect(),
        };
        (alphas, beta)
    }

    fn encode(&self, alphas: &[f64], beta: f64) -> Vec<f64> {
        let room = (1.0 - beta).sqrt();
        let mut x: Vec<f64> = match self.mode {
            DccMode::Scalar => vec![logit(alphas[0] / room)],
            DccMode::Generalized => alphas.iter().map(|a| logit(a / room)).collect(),
        };
        x.push(logit(beta));
        x
    }
}

fn feasible_objective(eps: &DMatrix<f64>, q_bar: &DMatrix<f64>, layout: Layout, x: &[f64]) -> f64 {
    let (alphas, beta) = layout.decode(x);
    let params = DccParams {
        alphas,
        beta,
        q_bar: q_bar.clone(),
    };
    // A quadratic penalty is too weak here: violations of order 1e-6 cost
    // ~1e-6 while buying likelihood gains of order 1e-3, so an indefinite
    // intercept is treated as infeasible instead.
    if !check_intercept_psd(&params).psd {
        return f64::INFINITY;
    }
    match loglik_unchecked(eps, &params) {
        Ok(ll) if ll.is_finite() => -ll,
        _ => f64::INFINITY,
    }
}

const START_POINTS: [(f64, f64); 2] = [(0.2, 0.8), (0.1, 0.9)];
const MAX_SHRINKS: usize = 8;

/// Start points with a PSD intercept, shrinking the alphas towards zero when
/// a candidate is infeasible.
fn feasible_starts(layout: Layout, q_bar: &DMatrix<f64>) -> Vec<Vec<f64>> {
    START_POINTS
        .iter()
        .filter_map(|&(alpha, beta)| {
            let mut alpha = alpha;
            for _ in 0..=MAX_SHRINKS {
                let params = DccParams {
                    alphas: vec![alpha; layout.n],
                    beta,
                    q_bar: q_bar.clone(),
                };
                if check_intercept_psd(&params).psd {
                    return Some(layout.encode(&params.alphas, beta));
                }
                alpha *= 0.5;
            }
            None
        })
        .collect()
}

pub fn fit_dcc(eps: &DMatrix<f64>, mode: DccMode) -> Result<DccFit> {
    fit_dcc_with(eps, mode, &DccOptions::default())
}

/// Estimates `(A, beta)` with `Qbar` fixed by correlation targeting.
///
/// Stopping on the iteration limit, at the stationarity boundary or with an
/// indefinite intercept returns [`Error::DccNotConverged`] with the best point.
pub fn fit_dcc_with(eps: &DMatrix<f64>, mode: DccMode, opts: &DccOptions) -> Result<DccFit> {
    check_eps(eps)?;
    let (len, n) = eps.shape();
    if len <= 10 * n {
        return Err(Error::InsufficientData {
            needed: 10 * n + 1,
            got: len,
        });
    }
    let q_bar = correlation_targeting(eps)?;
    if !crate::linalg::is_positive_definite(&q_bar) {
        return Err(Error::Degenerate("correlation target is singular".into()));
    }
    let layout = Layout { mode, n };
    let starts = feasible_starts(layout, &q_bar);
    if starts.is_empty() {
        return Err(Error::Optimizer("no feasible start point".into()));
    }
    debug_assert!(starts.iter().all(|s| s.len() == layout.len()));

    let f = |x: &[f64]| feasible_objective(eps, &q_bar, layout, x);
    let first = restarted_fit(f, &starts, &opts.optim)?;
    let polish = nelder_mead(f, &first.point, &opts.optim)?;
    let iterations = first.iterations + polish.iterations;
    let best = if polish.value <= first.value { polish } else { first };

    let (alphas, beta) = layout.decode(&best.point);
    let params = DccParams { alphas, beta, q_bar };
    let check = check_intercept_psd(&params);
    let warning = (params.persistence() > 1.0 - BOUNDARY_TOL).then(|| {
        format!(
            "optimum at the stationarity boundary (max alpha^2 + beta = {:.6})",
            params.persistence()
        )
    });
    let warning = warning.or_else(|| {
        (!check.psd).then(|| format!("intercept not PSD (min eigenvalue {:e})", check.min_eigenvalue))
    });
    let mut correlation_path = CorrelationPath {
        dates: Vec::new(),
        dim: n,
        data: Vec::with_capacity(len * n * n),
    };
    recurse(eps, &params, |_, _, r| {
        correlation_path.data.extend_from_slice(r);
        Ok(())
    })?;
    let fit = DccFit {
        log_likelihood: loglik_unchecked(eps, &params)?,
        params,
        correlation_path,
        mode,
        converged: best.converged && warning.is_none(),
        iterations,
        intercept_min_eigenvalue: check.min_eigenvalue,
        warning,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::DccNotConverged(Box::new(fit)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSeries {
    pub i: usize,
    pub j: usize,
    /// Empty when the path carries no dates.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

pub fn pairwise_series(path: &CorrelationPath, i: usize, j: usize) -> Result<PairSeries> {
    let n = path.dim();
    if i >= n || j >= n {
        return Err(Error::validation(format!("pair ({i}, {j}) out of range for {n} assets")));
    }
    if i == j {
        return Err(Error::validation("a pair needs two distinct assets"));
    }
    Ok(PairSeries {
        i,
        j,
        dates: path.dates.clone(),
        values: (0..path.len()).map(|t| path.rho(t, i, j)).collect(),
    })
}

/// All pairs `(i, j)` with `i < j`, in row order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}
