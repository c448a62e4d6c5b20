//! Derivative-free minimization.
//!
//! A textbook Nelder-Mead simplex search (reflection 1, expansion 2,
//! contraction 0.5, shrink 0.5) plus a multi-start wrapper. Callers maximize
//! likelihoods by minimizing their negation. Constraints are handled by the
//! callers, through smooth reparameterizations where those exist and through
//! [`quadratic_penalty`] otherwise.

use serde::Serialize;

use crate::error::{Error, Result};

/// Weight of the additive constraint penalty `weight * violation^2`.
pub const PENALTY_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Tolerance on the spread of objective values over the simplex,
    /// taken relative to `max(1, |f_best|)`.
    pub tol_f: f64,
    /// Tolerance on the simplex diameter (max-norm distance to the best vertex).
    pub tol_x: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol_f: 1e-8,
            tol_x: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Tolerance,
    MaxIter,
    DegenerateSimplex,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

/// `PENALTY_WEIGHT * max(violation, 0)^2`.
pub fn quadratic_penalty(violation: f64) -> f64 {
    let v = violation.max(0.0);
    PENALTY_WEIGHT * v * v
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn initial_step(x: f64) -> f64 {
    (0.05 * x.abs()).max(0.01)
}

/// Minimizes `objective` starting from `start`.
///
/// Non-finite objective values met during the search are treated as `+inf`,
/// so an objective may signal infeasibility by returning `f64::INFINITY` or NaN.
pub fn nelder_mead<F>(mut objective: F, start: &[f64], opts: &NelderMeadOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if start.is_empty() {
        return Err(Error::validation("nelder_mead: empty start vector"));
    }
    let f_start = objective(start);
    if !f_start.is_finite() {
        return Err(Error::validation(format!(
            "nelder_mead: objective is not finite at start point {start:?}"
        )));
    }

    let mut eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    values.push(f_start);
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += initial_step(start[i]);
        values.push(eval(&v));
        simplex.push(v);
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];

    let termination = loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted_x: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_f: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = sorted_x;
        values = sorted_f;
        order = (0..=n).collect();

        let best = values[0];
        let spread = values[n] - best;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);

        if spread <= opts.tol_f * best.abs().max(1.0) && diameter <= opts.tol_x {
            break Termination::Tolerance;
        }
        if diameter == 0.0 {
            break Termination::DegenerateSimplex;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let worst = simplex[n].clone();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        let mut shrink = false;
        if fr < values[0] {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else if fr < values[n] {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc);
            if fc <= fr {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                shrink = true;
            }
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            if fc < values[n] {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                shrink = true;
            }
        }

        if shrink {
            let best_x = simplex[0].clone();
            for k in 1..=n {
                for (x, b) in simplex[k].iter_mut().zip(&best_x) {
                    *x = b + SHRINK * (*x - b);
                }
                values[k] = eval(&simplex[k]);
            }
        }

        trace.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    };

    Ok(OptimResult {
        point: simplex.swap_remove(0),
        value: values[0],
        iterations,
        converged: termination == Termination::Tolerance,
        termination,
        trace,
    })
}

/// Runs [`nelder_mead`] from every start and keeps the lowest objective value.
///
/// Starts at which the objective is not finite are skipped. Ties keep the
/// earliest start.
pub fn restarted_fit<F>(mut objective: F, starts: &[Vec<f64>], opts: &NelderMeadOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if starts.is_empty() {
        return Err(Error::validation("restarted_fit: no start points"));
    }
    let mut best: Option<OptimResult> = None;
    let mut failures = Vec::new();
    for (k, start) in starts.iter().enumerate() {
        match nelder_mead(&mut objective, start, opts) {
            Ok(res) => {
                if best.as_ref().is_none_or(|b| res.value < b.value) {
                    best = Some(res);
                }
            }
            Err(e) => failures.push(format!("start {k}: {e}")),
        }
    }
    best.ok_or_else(|| Error::Optimizer(format!("all starts failed ({})", failures.join("; "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_quadratic() {
        let res = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &NelderMeadOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.point[0] - 3.0).abs() < 1e-6, "{:?}", res.point);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let res = nelder_mead(f, &[-1.2, 1.0], &NelderMeadOptions::default()).unwrap();
        assert!(res.converged, "{:?}", res.termination);
        assert!((res.point[0] - 1.0).abs() < 1e-4);
        assert!((res.point[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn penalized_constrained_quadratic() {
        // min |x|^2 s.t. x1 >= 1. KKT: x = (1, 0), multiplier 2. Under the
        // quadratic penalty with weight w the minimizer is x1 = w / (1 + w).
        let f = |x: &[f64]| x[0] * x[0] + x[1] * x[1] + quadratic_penalty(1.0 - x[0]);
        let res = nelder_mead(f, &[3.0, 2.0], &NelderMeadOptions::default()).unwrap();
        let expected = PENALTY_WEIGHT / (1.0 + PENALTY_WEIGHT);
        assert!((res.point[0] - 1.0).abs() < 1e-3);
        assert!((res.point[0] - expected).abs() < 1e-6);
        assert!(res.point[1].abs() < 1e-6);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let err = nelder_mead(|_| f64::NAN, &[1.0], &NelderMeadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn max_iter_reported() {
        let opts = NelderMeadOptions {
            max_iter: 3,
            ..Default::default()
        };
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let res = nelder_mead(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.termination, Termination::MaxIter);
        assert_eq!(res.iterations, 3);
    }

    #[test]
    fn single_start_matches_plain_run() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + (x[1] + 0.5).powi(4);
        let opts = NelderMeadOptions::default();
        let a = nelder_mead(f, &[0.3, 0.1], &opts).unwrap();
        let b = restarted_fit(f, &[vec![0.3, 0.1]], &opts).unwrap();
        assert_eq!(a.point, b.point);
        assert_eq!(a.value, b.value);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn infeasible_start_is_skipped() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 2.0).powi(2)
            }
        };
        let res = restarted_fit(f, &[vec![-1.0], vec![0.5]], &NelderMeadOptions::default()).unwrap();
        assert!((res.point[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn all_starts_failing_is_an_error() {
        let err = restarted_fit(|_| f64::INFINITY, &[vec![0.0], vec![1.0]], &NelderMeadOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Optimizer(_)));
    }

    #[test]
    fn multimodal_global_optimum() {
        // Local minima near -1.0, 1.1, 3.0; the deepest one located by grid search.
        let f = |x: &[f64]| {
            let x = x[0];
            (x + 1.0).powi(2) * (x - 1.1).powi(2) * (x - 3.0).powi(2) / 10.0 - 0.3 * (-(x - 3.0).powi(2)).exp()
        };
        let grid_best = (0..=80_000)
            .map(|k| -4.0 + k as f64 * 1e-4)
            .min_by(|a, b| f(&[*a]).total_cmp(&f(&[*b])))
            .unwrap();
        let starts = vec![vec![-2.0], vec![0.5], vec![2.5]];
        let res = restarted_fit(f, &starts, &NelderMeadOptions::default()).unwrap();
        assert!((res.point[0] - grid_best).abs() < 2e-4, "{} vs {}", res.point[0], grid_best);
    }

    #[test]
    fn logistic_inverts_logit() {
        for p in [1e-6, 0.1, 0.5, 0.9, 0.999] {
            assert!((logistic(logit(p)) - p).abs() < 1e-12);
        }
    }
}
