//! Synthetic return panels from a GARCH(1,1) + generalized DCC process.
//!
//! Each step updates `Q[t]`, `R[t]` from the previous shock, draws
//! `e[t] ~ N(0, R[t])` through a Cholesky factor, updates the variances from
//! the previous return and emits `r[t,i] = sqrt(h[t,i]) * e[t,i]`.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dcc::{CorrelationPath, DccParams};
use crate::error::{Error, Result};
use crate::garch::GarchParams;
use crate::ingest::ReturnPanel;
use crate::linalg::cholesky_in_place;

/// Identity of the pseudo-random source, recorded in run metadata.
pub const GENERATOR: &str = "ChaCha20Rng (rand_chacha 0.9, seed_from_u64) + StandardNormal (rand_distr 0.5)";
pub const DEFAULT_BURN_IN: usize = 500;

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

/// Correlation block of a [`DgpSpec`], in JSON-friendly form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccSpec {
    pub alphas: Vec<f64>,
    pub beta: f64,
    /// Rows of the unit-diagonal target matrix.
    pub q_bar: Vec<Vec<f64>>,
}

impl DccSpec {
    pub fn to_params(&self) -> Result<DccParams> {
        let n = self.q_bar.len();
        if self.q_bar.iter().any(|row| row.len() != n) {
            return Err(Error::validation("q_bar must be square"));
        }
        let q = DMatrix::from_fn(n, n, |i, j| self.q_bar[i][j]);
        DccParams::new(self.alphas.clone(), self.beta, q)
    }

    pub fn from_params(p: &DccParams) -> Self {
        let n = p.dim();
        Self {
            alphas: p.alphas.clone(),
            beta: p.beta,
            q_bar: (0..n).map(|i| (0..n).map(|j| p.q_bar[(i, j)]).collect()).collect(),
        }
    }
}

/// Fully specified data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub garch: Vec<GarchParams>,
    pub dcc: DccSpec,
    /// Number of emitted observations (after burn-in).
    pub t: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub assets: Option<Vec<String>>,
    /// Date of the first emitted observation; later ones are consecutive days.
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
}

impl DgpSpec {
    pub fn new(garch: Vec<GarchParams>, dcc: &DccParams, t: usize, seed: u64) -> Self {
        Self {
            garch,
            dcc: DccSpec::from_params(dcc),
            t,
            seed,
            burn_in: DEFAULT_BURN_IN,
            assets: None,
            start_date: default_start(),
        }
    }

    pub fn asset_names(&self) -> Vec<String> {
        self.assets
            .clone()
            .unwrap_or_else(|| (1..=self.garch.len()).map(|i| format!("A{i}")).collect())
    }

    pub fn validate(&self) -> Result<DccParams> {
        if self.t == 0 {
            return Err(Error::validation("simulation length must be at least 1"));
        }
        for g in &self.garch {
            g.validate()?;
        }
        let dcc = self.dcc.to_params()?;
        if dcc.dim() != self.garch.len() {
            return Err(Error::validation(format!(
                "{} GARCH margins but a {}-asset correlation block",
                self.garch.len(),
                dcc.dim()
            )));
        }
        if self.asset_names().len() != self.garch.len() {
            return Err(Error::validation("asset names do not match the number of margins"));
        }
        Ok(dcc)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationMetadata {
    pub seed: u64,
    pub generator: String,
    pub burn_in: usize,
    pub t: usize,
    pub n_assets: usize,
}

/// Simulated panel together with the latent paths that generated it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: ReturnPanel,
    /// True conditional variances, `T x N`.
    pub variances: DMatrix<f64>,
    /// True standardized shocks, `T x N`.
    pub shocks: DMatrix<f64>,
    pub correlations: CorrelationPath,
    pub metadata: SimulationMetadata,
}

pub fn simulate_garch_dcc(spec: &DgpSpec) -> Result<ReturnPanel> {
    Ok(simulate_with_paths(spec)?.panel)
}

pub fn simulate_with_paths(spec: &DgpSpec) -> Result<Simulation> {
    let dcc = spec.validate()?;
    let n = dcc.dim();
    let total = spec.burn_in + spec.t;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let a = &dcc.alphas;
    let intercept: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            dcc.q_bar[(i, j)] * (1.0 - a[i] * a[j] - dcc.beta)
        })
        .collect();
    let mut q: Vec<f64> = (0..n * n).map(|k| dcc.q_bar[(k / n, k % n)]).collect();
    let mut h: Vec<f64> = spec
        .garch
        .iter()
        .map(|g| g.unconditional_variance().expect("validated stationary"))
        .collect();
    let mut r_prev = vec![0.0; n];
    let mut e_prev = vec![0.0; n];
    let mut news = vec![0.0; n];
    let mut corr = vec![0.0; n * n];
    let mut chol = vec![0.0; n * n];
    let mut u = vec![0.0; n];
    let mut e = vec![0.0; n];

    let mut returns = DMatrix::zeros(spec.t, n);
    let mut variances = DMatrix::zeros(spec.t, n);
    let mut shocks = DMatrix::zeros(spec.t, n);
    let mut corr_data = Vec::with_capacity(spec.t * n * n);

    for step in 0..total {
        if step > 0 {
            for i in 0..n {
                news[i] = a[i] * e_prev[i];
            }
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    q[k] = intercept[k] + news[i] * news[j] + dcc.beta * q[k];
                }
            }
            for (i, g) in spec.garch.iter().enumerate() {
                h[i] = g.omega + g.a * r_prev[i] * r_prev[i] + g.b * h[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                corr[i * n + j] = if i == j {
                    1.0
                } else {
                    (q[i * n + j] / (q[i * n + i].sqrt() * q[j * n + j].sqrt())).clamp(-1.0, 1.0)
                };
            }
        }
        chol.copy_from_slice(&corr);
        if !cholesky_in_place(&mut chol, n) {
            return Err(Error::Degenerate(format!("R[t] not positive definite at step {step}")));
        }
        for ui in u.iter_mut() {
            *ui = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            e[i] = (0..=i).map(|k| chol[i * n + k] * u[k]).sum();
        }
        for i in 0..n {
            r_prev[i] = h[i].sqrt() * e[i];
        }
        e_prev.copy_from_slice(&e);

        if step >= spec.burn_in {
            let t = step - spec.burn_in;
            for i in 0..n {
                returns[(t, i)] = r_prev[i];
                variances[(t, i)] = h[i];
                shocks[(t, i)] = e[i];
            }
            corr_data.extend_from_slice(&corr);
        }
    }

    let dates: Vec<NaiveDate> = (0..spec.t as u64)
        .map(|k| spec.start_date.checked_add_days(Days::new(k)).expect("date in range"))
        .collect();
    let origin = spec.start_date.pred_opt().expect("date in range");
    let panel = ReturnPanel::new(dates.clone(), spec.asset_names(), returns)?.with_origin(origin)?;
    let correlations = CorrelationPath::from_raw(n, corr_data).with_dates(dates)?;
    Ok(Simulation {
        panel,
        variances,
        shocks,
        correlations,
        metadata: SimulationMetadata {
            seed: spec.seed,
            generator: GENERATOR.to_string(),
            burn_in: spec.burn_in,
            t: spec.t,
            n_assets: n,
        },
    })
}
