//! Command-line front end.
//!
//! Every command writes its outputs atomically (temp file + rename) and a
//! manifest JSON describing inputs, flags and library version. Data outputs
//! are deterministic; only the manifest carries a timestamp.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dcc::{self, all_pairs, check_intercept_psd, implied_news_matrix, pairwise_series, DccFit, DccMode, DccOptions};
use crate::descriptive::{self, describe_with, StdDenominator};
use crate::error::{Error, ErrorKind, Result};
use crate::format::Precision;
use crate::garch::{self, fit_garch_panel, GarchFit, GarchOptions};
use crate::ingest::{self, align_calendars, CsvOptions, GapMode, ReturnPanel};
use crate::optimize::NelderMeadOptions;
use crate::simulate::{simulate_with_paths, DgpSpec};

pub const THREADS_ENV: &str = "DCC_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dcc-lab", version, about = "Generalized DCC-GARCH estimation and reporting")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Descriptive statistics table per asset.
    Describe(DescribeArgs),
    /// Univariate GARCH(1,1) fits per asset.
    FitGarch(FitGarchArgs),
    /// Two-step DCC fit on the panel.
    FitDcc(FitDccArgs),
    /// Pairwise conditional correlation series in long format.
    Correlations(CorrelationsArgs),
    /// Simulate a return panel from a JSON process definition.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    Prices,
    Returns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapArg {
    Recompute,
    Filter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Scalar,
    Generalized,
}

impl From<ModeArg> for DccMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scalar => DccMode::Scalar,
            ModeArg::Generalized => DccMode::Generalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelimiterArg {
    Comma,
    Tab,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Input CSV (date column plus one column per asset).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "prices")]
    pub input_kind: InputKind,
    /// Second panel; the run uses the intersection of both calendars.
    #[arg(long)]
    pub align_to: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "recompute")]
    pub gap_mode: GapArg,
    /// Comma-separated subset of asset columns, in the order to use.
    #[arg(long, value_delimiter = ',')]
    pub assets: Option<Vec<String>>,
    #[arg(long, default_value = ingest::DEFAULT_DATE_COLUMN)]
    pub date_column: String,
    #[arg(long, default_value = ingest::DEFAULT_DATE_FORMAT)]
    pub date_format: String,
    #[arg(long)]
    pub drop_incomplete: bool,
    /// Multiplier applied to log returns (100 gives percent).
    #[arg(long, default_value_t = ingest::PERCENT)]
    pub scale: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Decimal places for numeric output, or `full`.
    #[arg(long, default_value = "4")]
    pub precision: Precision,
    /// Manifest path; defaults to `<output>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = NelderMeadOptions::default().tol_f)]
    pub tol_f: f64,
    #[arg(long, default_value_t = NelderMeadOptions::default().tol_x)]
    pub tol_x: f64,
    #[arg(long, default_value_t = NelderMeadOptions::default().max_iter)]
    pub max_iter: usize,
}

impl OptimArgs {
    fn options(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            tol_f: self.tol_f,
            tol_x: self.tol_x,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "comma")]
    pub delimiter: DelimiterArg,
    /// Use the 1/n standard deviation instead of 1/(n-1).
    #[arg(long)]
    pub population_std: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitGarchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// Optional CSV of fitted conditional variances.
    #[arg(long)]
    pub variance_out: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitDccArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "generalized")]
    pub mode: ModeArg,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorrelationsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "generalized")]
    pub mode: ModeArg,
    /// `all` or comma-separated `A:B` pairs.
    #[arg(long, default_value = "all")]
    pub pairs: String,
    /// Long CSV: date, asset_i, asset_j, rho.
    #[arg(long)]
    pub output: PathBuf,
    /// Descriptive statistics of every emitted pair series.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    /// Time-averaged correlation matrix.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Process definition JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Return panel CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Metadata JSON (seed, generator, burn-in).
    #[arg(long)]
    pub metadata: PathBuf,
    /// Overrides the seed in the definition.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the burn-in in the definition.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Result of a command that ran to completion. `converged == false` means the
/// outputs were written from best-so-far estimates.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub converged: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            3
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => 1,
        ErrorKind::Io => 2,
        ErrorKind::NotConverged => 3,
    }
}

/// Single-line JSON error for stderr.
pub fn error_line(err: &Error) -> String {
    let kind = match err.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Io => "io",
        ErrorKind::NotConverged => "not-converged",
    };
    json!({ "error": kind, "exit_code": exit_code(err), "message": err.to_string() }).to_string()
}

fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Writes `path` through a temporary file in the same directory.
fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn default_manifest(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest<A: Serialize>(
    command: &str,
    args: &A,
    inputs: &[&Path],
    outputs: &[PathBuf],
    converged: bool,
    manifest: &Path,
) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(json!({ "path": p, "sha256": sha256_file(p)? })))
        .collect::<Result<Vec<_>>>()?;
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = json!({
        "tool": "dcc-lab",
        "version": crate::VERSION,
        "command": command,
        "flags": args,
        "inputs": inputs,
        "outputs": outputs,
        "converged": converged,
        "created_unix": created,
    });
    write_json(manifest, &doc)
}

fn csv_options(a: &InputArgs) -> CsvOptions {
    CsvOptions {
        date_column: a.date_column.clone(),
        date_format: a.date_format.clone(),
        drop_incomplete: a.drop_incomplete,
    }
}

fn read_panel(path: &Path, a: &InputArgs) -> Result<ReturnPanel> {
    let opts = csv_options(a);
    match a.input_kind {
        InputKind::Prices => ingest::log_returns(&ingest::load_price_csv(path, &opts)?, a.scale),
        InputKind::Returns => ingest::load_return_csv(path, &opts),
    }
}

/// Loads, aligns and subsets the input panel.
pub fn load_input(a: &InputArgs) -> Result<ReturnPanel> {
    let mut panel = read_panel(&a.input, a)?;
    if let Some(other) = &a.align_to {
        let right = read_panel(other, a)?;
        let mode = match a.gap_mode {
            GapArg::Recompute => GapMode::RecomputeOverGaps,
            GapArg::Filter => GapMode::Filter,
        };
        panel = align_calendars(&panel, &right, mode)?;
    }
    if let Some(names) = &a.assets {
        panel = panel.select(names)?;
    }
    Ok(panel)
}

fn input_paths(a: &InputArgs) -> Vec<&Path> {
    let mut v = vec![a.input.as_path()];
    if let Some(p) = &a.align_to {
        v.push(p.as_path());
    }
    v
}

fn run_describe(args: &DescribeArgs) -> Result<RunOutcome> {
    let panel = load_input(&args.input)?;
    let denom = if args.population_std {
        StdDenominator::Population
    } else {
        StdDenominator::Sample
    };
    let stats = (0..panel.n_assets())
        .map(|i| describe_with(&panel.column(i), denom))
        .collect::<Result<Vec<_>>>()?;
    let delim = match args.delimiter {
        DelimiterArg::Comma => b',',
        DelimiterArg::Tab => b'\t',
    };
    write_atomic(&args.output, |w| {
        descriptive::write_table(w, panel.assets(), &stats, args.out.precision, delim)
    })?;
    finish("describe", args, &input_paths(&args.input), vec![args.output.clone()], true, &args.out)
}

fn finish<A: Serialize>(
    command: &str,
    args: &A,
    inputs: &[&Path],
    outputs: Vec<PathBuf>,
    converged: bool,
    out: &OutputArgs,
) -> Result<RunOutcome> {
    let manifest = out.manifest.clone().unwrap_or_else(|| default_manifest(&outputs[0]));
    write_manifest(command, args, inputs, &outputs, converged, &manifest)?;
    Ok(RunOutcome {
        outputs,
        manifest,
        converged,
    })
}

/// GARCH fits for every column; non-converged fits keep their best point.
fn garch_stage(panel: &ReturnPanel, optim: NelderMeadOptions) -> Result<(Vec<GarchFit>, bool)> {
    let results = fit_garch_panel(panel.returns(), &GarchOptions { optim }, threads());
    let mut fits = Vec::with_capacity(results.len());
    let mut all_converged = true;
    for (name, res) in panel.assets().iter().zip(results) {
        match res {
            Ok(f) => fits.push(f),
            Err(Error::GarchNotConverged(best)) => {
                warn!("GARCH fit for {name} did not converge");
                all_converged = false;
                fits.push(*best);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((fits, all_converged))
}

fn garch_json(name: &str, f: &GarchFit, p: Precision) -> Value {
    json!({
        "asset": name,
        "omega": p.round(f.params.omega),
        "a": p.round(f.params.a),
        "b": p.round(f.params.b),
        "mean": p.round(f.mean),
        "loglik": p.round(f.log_likelihood),
        "converged": f.converged,
        "iterations": f.iterations,
    })
}

fn run_fit_garch(args: &FitGarchArgs) -> Result<RunOutcome> {
    let panel = load_input(&args.input)?;
    let (fits, converged) = garch_stage(&panel, args.optim.options())?;
    let p = args.out.precision;
    let docs: Vec<Value> = panel
        .assets()
        .iter()
        .zip(&fits)
        .map(|(n, f)| garch_json(n, f, p))
        .collect();
    write_json(&args.output, &Value::Array(docs))?;
    let mut outputs = vec![args.output.clone()];
    if let Some(path) = &args.variance_out {
        let h = variance_matrix(&fits, panel.len());
        write_atomic(path, |w| ingest::write_matrix_csv(w, panel.dates(), panel.assets(), &h, p))?;
        outputs.push(path.clone());
    }
    finish("fit-garch", args, &input_paths(&args.input), outputs, converged, &args.out)
}

fn variance_matrix(fits: &[GarchFit], len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(len, fits.len(), |t, i| fits[i].variance_path[t])
}

/// Standardized residuals of the demeaned returns.
pub fn standardized_residuals(panel: &ReturnPanel, fits: &[GarchFit]) -> Result<DMatrix<f64>> {
    let r = panel.returns();
    let centered = DMatrix::from_fn(r.nrows(), r.ncols(), |t, i| r[(t, i)] - fits[i].mean);
    garch::standardize(&centered, &variance_matrix(fits, panel.len()))
}

struct Pipeline {
    panel: ReturnPanel,
    garch: Vec<GarchFit>,
    dcc: DccFit,
    converged: bool,
}

fn run_pipeline(input: &InputArgs, mode: DccMode, optim: NelderMeadOptions) -> Result<Pipeline> {
    let panel = load_input(input)?;
    let (garch, garch_ok) = garch_stage(&panel, optim)?;
    let eps = standardized_residuals(&panel, &garch)?;
    let (mut fit, dcc_ok) = match dcc::fit_dcc_with(&eps, mode, &DccOptions { optim }) {
        Ok(f) => (f, true),
        Err(Error::DccNotConverged(best)) => {
            warn!(
                "DCC fit did not converge: {}",
                best.warning.as_deref().unwrap_or("iteration limit")
            );
            (*best, false)
        }
        Err(e) => return Err(e),
    };
    fit.correlation_path = fit.correlation_path.with_dates(panel.dates().to_vec())?;
    Ok(Pipeline {
        panel,
        garch,
        dcc: fit,
        converged: garch_ok && dcc_ok,
    })
}

fn matrix_json(m: &DMatrix<f64>, p: Precision) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(p.round(m[(i, j)]))).collect()))
            .collect(),
    )
}

pub fn dcc_json(pipe_assets: &[String], n_obs: usize, fit: &DccFit, garch: &[GarchFit], p: Precision) -> Value {
    let params = &fit.params;
    json!({
        "mode": fit.mode,
        "assets": pipe_assets,
        "n_obs": n_obs,
        "alphas": params.alphas.iter().map(|a| p.round(*a)).collect::<Vec<_>>(),
        "beta": p.round(params.beta),
        "loglik": p.round(fit.log_likelihood),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "warning": fit.warning,
        "implied_news": matrix_json(&implied_news_matrix(params), p),
        "intercept_min_eigenvalue": p.round(check_intercept_psd(params).min_eigenvalue),
        "q_bar": matrix_json(&params.q_bar, p),
        "garch": pipe_assets.iter().zip(garch).map(|(n, g)| garch_json(n, g, p)).collect::<Vec<_>>(),
    })
}

fn run_fit_dcc(args: &FitDccArgs) -> Result<RunOutcome> {
    let pipe = run_pipeline(&args.input, args.mode.into(), args.optim.options())?;
    let doc = dcc_json(pipe.panel.assets(), pipe.panel.len(), &pipe.dcc, &pipe.garch, args.out.precision);
    write_json(&args.output, &doc)?;
    finish(
        "fit-dcc",
        args,
        &input_paths(&args.input),
        vec![args.output.clone()],
        pipe.converged,
        &args.out,
    )
}

/// Resolves `all` or `A:B,C:D` against the asset list.
pub fn parse_pairs(spec: &str, assets: &[String]) -> Result<Vec<(usize, usize)>> {
    if spec.trim() == "all" {
        return Ok(all_pairs(assets.len()));
    }
    let index = |name: &str| {
        assets
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::validation(format!("unknown asset `{name}` in --pairs")))
    };
    spec.split(',')
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| Error::validation(format!("pair `{item}` must look like A:B")))?;
            let (i, j) = (index(a.trim())?, index(b.trim())?);
            if i == j {
                return Err(Error::validation(format!("pair `{item}` repeats an asset")));
            }
            Ok((i, j))
        })
        .collect()
}

fn run_correlations(args: &CorrelationsArgs) -> Result<RunOutcome> {
    let pipe = run_pipeline(&args.input, args.mode.into(), args.optim.options())?;
    let assets = pipe.panel.assets();
    let pairs = parse_pairs(&args.pairs, assets)?;
    let p = args.out.precision;
    let path = &pipe.dcc.correlation_path;
    let series = pairs
        .iter()
        .map(|&(i, j)| pairwise_series(path, i, j))
        .collect::<Result<Vec<_>>>()?;

    write_atomic(&args.output, |w| {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
        out.write_record(["date", "asset_i", "asset_j", "rho"]).map_err(err)?;
        for s in &series {
            for (d, v) in s.dates.iter().zip(&s.values) {
                out.write_record([
                    d.format(ingest::DEFAULT_DATE_FORMAT).to_string(),
                    assets[s.i].clone(),
                    assets[s.j].clone(),
                    p.fmt(*v),
                ])
                .map_err(err)?;
            }
        }
        out.flush().map_err(|e| Error::io(&args.output, e))
    })?;
    let mut outputs = vec![args.output.clone()];

    if let Some(summary) = &args.summary_out {
        let names: Vec<String> = series.iter().map(|s| format!("{}-{}", assets[s.i], assets[s.j])).collect();
        let stats = series
            .iter()
            .map(|s| descriptive::describe(&s.values))
            .collect::<Result<Vec<_>>>()?;
        write_atomic(summary, |w| descriptive::write_table(w, &names, &stats, p, b','))?;
        outputs.push(summary.clone());
    }
    if let Some(matrix) = &args.matrix_out {
        let m = path.mean_matrix();
        write_atomic(matrix, |w| {
            let mut out = csv::Writer::from_writer(w);
            let err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
            let mut header = vec![String::new()];
            header.extend(assets.iter().cloned());
            out.write_record(&header).map_err(err)?;
            for (i, name) in assets.iter().enumerate() {
                let mut rec = vec![name.clone()];
                rec.extend((0..assets.len()).map(|j| p.fmt(m[(i, j)])));
                out.write_record(&rec).map_err(err)?;
            }
            out.flush().map_err(|e| Error::io(matrix, e))
        })?;
        outputs.push(matrix.clone());
    }
    finish("correlations", args, &input_paths(&args.input), outputs, pipe.converged, &args.out)
}

fn run_simulate(args: &SimulateArgs) -> Result<RunOutcome> {
    let text = fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec: DgpSpec = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(b) = args.burn_in {
        spec.burn_in = b;
    }
    let sim = simulate_with_paths(&spec)?;
    write_atomic(&args.output, |w| sim.panel.write_csv(w, args.out.precision))?;
    write_json(&args.metadata, &serde_json::to_value(&sim.metadata)?)?;
    finish(
        "simulate",
        args,
        &[args.spec.as_path()],
        vec![args.output.clone(), args.metadata.clone()],
        true,
        &args.out,
    )
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    match &config.command {
        Command::Describe(a) => run_describe(a),
        Command::FitGarch(a) => run_fit_garch(a),
        Command::FitDcc(a) => run_fit_dcc(a),
        Command::Correlations(a) => run_correlations(a),
        Command::Simulate(a) => run_simulate(a),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&config) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
