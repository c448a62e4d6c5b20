//! Price ingestion, log returns and calendar alignment.
//!
//! Panels are date-indexed `T x N` matrices (rows are dates, columns assets).
//! Dates are plain calendar dates.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::format::Precision;

pub const DEFAULT_DATE_COLUMN: &str = "date";
pub const DEFAULT_DATE_FORMAT: &str = "%Y-%m-%d";
/// Returns are expressed in percent.
pub const PERCENT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    prices: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: DMatrix<f64>,
    /// Date of the price observation preceding the first return, when known.
    origin: Option<NaiveDate>,
}

fn check_shape(dates: &[NaiveDate], assets: &[String], m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != dates.len() || m.ncols() != assets.len() {
        return Err(Error::validation(format!(
            "matrix is {}x{} but panel has {} dates and {} assets",
            m.nrows(),
            m.ncols(),
            dates.len(),
            assets.len()
        )));
    }
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!(
            "dates must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let mut seen = HashSet::new();
    for a in assets {
        if !seen.insert(a.as_str()) {
            return Err(Error::validation(format!("duplicate asset identifier `{a}`")));
        }
    }
    Ok(())
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        check_shape(&dates, &assets, &prices)?;
        for t in 0..prices.nrows() {
            for i in 0..prices.ncols() {
                let p = prices[(t, i)];
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::validation(format!(
                        "non-positive price {p} for {} at row {}",
                        assets[i],
                        t + 1
                    )));
                }
            }
        }
        Ok(Self { dates, assets, prices })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W, precision: Precision) -> Result<()> {
        write_matrix_csv(out, &self.dates, &self.assets, &self.prices, precision)
    }
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        check_shape(&dates, &assets, &returns)?;
        if let Some(pos) = returns.iter().position(|x| !x.is_finite()) {
            // column-major storage
            let (t, i) = (pos % returns.nrows(), pos / returns.nrows());
            return Err(Error::validation(format!(
                "non-finite return for {} at row {}",
                assets[i],
                t + 1
            )));
        }
        Ok(Self {
            dates,
            assets,
            returns,
            origin: None,
        })
    }

    /// Records the date of the price preceding the first return.
    pub fn with_origin(mut self, origin: NaiveDate) -> Result<Self> {
        if self.dates.first().is_some_and(|d| *d <= origin) {
            return Err(Error::validation("origin must precede the first return date"));
        }
        self.origin = Some(origin);
        Ok(self)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn origin(&self) -> Option<NaiveDate> {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.returns.column(i).iter().copied().collect()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<ReturnPanel> {
        let idx = names
            .iter()
            .map(|n| {
                self.asset_index(n)
                    .ok_or_else(|| Error::validation(format!("unknown asset `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let returns = DMatrix::from_fn(self.len(), idx.len(), |t, k| self.returns[(t, idx[k])]);
        let mut out = ReturnPanel::new(self.dates.clone(), names.to_vec(), returns)?;
        out.origin = self.origin;
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, out: W, precision: Precision) -> Result<()> {
        write_matrix_csv(out, &self.dates, &self.assets, &self.returns, precision)
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub date_column: String,
    /// chrono `strftime` pattern.
    pub date_format: String,
    /// Drop rows with a missing or non-numeric cell instead of failing.
    pub drop_incomplete: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            date_column: DEFAULT_DATE_COLUMN.to_string(),
            date_format: DEFAULT_DATE_FORMAT.to_string(),
            drop_incomplete: false,
        }
    }
}

struct RawTable {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    /// Rows, with the 1-based data-row number of each.
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_table<R: Read>(reader: R, opts: &CsvOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format {
            row: 0,
            message: format!("cannot read header: {e}"),
        })?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h == opts.date_column)
        .ok_or_else(|| Error::Format {
            row: 0,
            message: format!("missing date column `{}`", opts.date_column),
        })?;
    let assets: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != date_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if assets.is_empty() {
        return Err(Error::Format {
            row: 0,
            message: "no asset columns".into(),
        });
    }

    let mut entries: Vec<(NaiveDate, usize, Vec<f64>)> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Format {
            row,
            message: e.to_string(),
        })?;
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, &opts.date_format).map_err(|e| Error::Format {
            row,
            message: format!("unparseable date `{raw_date}` ({e})"),
        })?;
        let mut values = Vec::with_capacity(assets.len());
        let mut incomplete = None;
        for (col, field) in record.iter().enumerate().filter(|(c, _)| *c != date_idx) {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    incomplete = Some((col, field.to_string()));
                    break;
                }
            }
        }
        if let Some((col, field)) = incomplete {
            if opts.drop_incomplete {
                continue;
            }
            let name = headers.get(col).unwrap_or("?");
            return Err(Error::Format {
                row,
                message: format!("missing or non-numeric value `{field}` in column `{name}`"),
            });
        }
        entries.push((date, row, values));
    }

    entries.sort_by_key(|(d, _, _)| *d);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::validation(format!(
            "duplicate date {} at rows {} and {}",
            w[0].0, w[0].1, w[1].1
        )));
    }
    let dates = entries.iter().map(|e| e.0).collect();
    let rows = entries.into_iter().map(|(_, r, v)| (r, v)).collect();
    Ok(RawTable { dates, assets, rows })
}

fn rows_to_matrix(rows: &[(usize, Vec<f64>)], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |t, i| rows[t].1[i])
}

/// Reads a price table. Rows are sorted by date; row numbers in errors refer
/// to data rows of the file, counting from 1 after the header.
pub fn read_price_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<PricePanel> {
    let table = read_table(reader, opts)?;
    for (row, values) in &table.rows {
        if let Some((i, p)) = values.iter().enumerate().find(|(_, p)| **p <= 0.0) {
            return Err(Error::validation(format!(
                "non-positive price {p} for {} at row {row}",
                table.assets[i]
            )));
        }
    }
    let prices = rows_to_matrix(&table.rows, table.assets.len());
    PricePanel::new(table.dates, table.assets, prices)
}

pub fn load_price_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_price_csv(file, opts)
}

/// Reads a table that already holds returns (no positivity requirement).
pub fn read_return_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<ReturnPanel> {
    let table = read_table(reader, opts)?;
    let returns = rows_to_matrix(&table.rows, table.assets.len());
    ReturnPanel::new(table.dates, table.assets, returns)
}

pub fn load_return_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_return_csv(file, opts)
}

pub fn write_matrix_csv<W: Write>(
    out: W,
    dates: &[NaiveDate],
    assets: &[String],
    m: &DMatrix<f64>,
    precision: Precision,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
    let mut header = vec![DEFAULT_DATE_COLUMN.to_string()];
    header.extend(assets.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (t, d) in dates.iter().enumerate() {
        let mut rec = vec![d.format(DEFAULT_DATE_FORMAT).to_string()];
        rec.extend((0..m.ncols()).map(|i| precision.fmt(m[(t, i)])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// `scale * ln(P[t+1] / P[t])`, dated by the later observation.
pub fn log_returns(panel: &PricePanel, scale: f64) -> Result<ReturnPanel> {
    let t = panel.len();
    if t < 2 {
        return Err(Error::InsufficientData { needed: 2, got: t });
    }
    let p = panel.prices();
    let returns = DMatrix::from_fn(t - 1, p.ncols(), |s, i| scale * (p[(s + 1, i)] / p[(s, i)]).ln());
    let out = ReturnPanel::new(panel.dates[1..].to_vec(), panel.assets.clone(), returns)?;
    out.with_origin(panel.dates[0])
}

/// How returns of the left panel are treated on retained dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapMode {
    /// Each joint row spans consecutive retained dates, so a Monday return
    /// of a 7-day asset covers Friday to Monday. Log returns are summed over
    /// the dropped days, which equals the log price ratio across the gap.
    #[default]
    RecomputeOverGaps,
    /// Rows on dates outside the intersection are simply removed.
    Filter,
}

fn is_price_date(panel: &ReturnPanel, d: NaiveDate) -> bool {
    panel.origin == Some(d) || panel.dates.binary_search(&d).is_ok()
}

/// Sum of the returns of column `i` dated in `(from, to]`.
fn span_sum(panel: &ReturnPanel, i: usize, from: NaiveDate, to: NaiveDate) -> f64 {
    let lo = panel.dates.partition_point(|d| *d <= from);
    let hi = panel.dates.partition_point(|d| *d <= to);
    (lo..hi).map(|t| panel.returns[(t, i)]).sum()
}

/// Joins two panels on the intersection of their dates, left columns first.
///
/// In [`GapMode::RecomputeOverGaps`] every joint row covers the interval
/// since the previous retained date, for both panels. The first retained
/// row is kept only when both panels have a price at a common origin
/// preceding it; otherwise it is dropped because its span is unknown.
pub fn align_calendars(left: &ReturnPanel, right: &ReturnPanel, mode: GapMode) -> Result<ReturnPanel> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::Alignment("cannot align an empty panel".into()));
    }
    if let Some(a) = left.assets.iter().find(|a| right.assets.contains(a)) {
        return Err(Error::validation(format!("asset `{a}` appears in both panels")));
    }
    let right_dates: HashSet<NaiveDate> = right.dates.iter().copied().collect();
    let common: Vec<NaiveDate> = left.dates.iter().copied().filter(|d| right_dates.contains(d)).collect();
    if common.is_empty() {
        return Err(Error::Alignment("panels share no dates".into()));
    }

    let mut assets = left.assets.clone();
    assets.extend(right.assets.iter().cloned());
    let nl = left.n_assets();
    let n = assets.len();

    match mode {
        GapMode::Filter => {
            let li: Vec<usize> = common.iter().map(|d| left.dates.binary_search(d).unwrap()).collect();
            let ri: Vec<usize> = common.iter().map(|d| right.dates.binary_search(d).unwrap()).collect();
            let m = DMatrix::from_fn(common.len(), n, |t, k| {
                if k < nl {
                    left.returns[(li[t], k)]
                } else {
                    right.returns[(ri[t], k - nl)]
                }
            });
            ReturnPanel::new(common, assets, m)
        }
        GapMode::RecomputeOverGaps => {
            let first_origin = match (left.origin, right.origin) {
                (Some(a), Some(b)) => {
                    let o = a.max(b);
                    (o < common[0] && is_price_date(left, o) && is_price_date(right, o)).then_some(o)
                }
                _ => None,
            };
            let mut spans: Vec<(NaiveDate, NaiveDate)> = Vec::with_capacity(common.len());
            if let Some(o) = first_origin {
                spans.push((o, common[0]));
            }
            spans.extend(common.windows(2).map(|w| (w[0], w[1])));
            if spans.is_empty() {
                return Err(Error::Alignment(
                    "only one common date and no common origin; no span can be recomputed".into(),
                ));
            }
            let m = DMatrix::from_fn(spans.len(), n, |t, k| {
                let (from, to) = spans[t];
                if k < nl {
                    span_sum(left, k, from, to)
                } else {
                    span_sum(right, k - nl, from, to)
                }
            });
            let origin = spans[0].0;
            let dates = spans.into_iter().map(|(_, to)| to).collect();
            ReturnPanel::new(dates, assets, m)?.with_origin(origin)
        }
    }
}
