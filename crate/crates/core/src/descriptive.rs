//! Summary statistics rows: moments, order statistics and the Jarque-Bera
//! normality test.
//!
//! Skewness and kurtosis use central moments with `1/n` normalization;
//! kurtosis is raw (3 for a normal law). The standard deviation defaults to
//! the `n - 1` sample convention.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdDenominator {
    /// `n - 1`
    #[default]
    Sample,
    /// `n`
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescriptiveStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub jarque_bera: f64,
    pub p_value: f64,
}

/// Row labels, in table order.
pub const ROW_LABELS: [&str; 10] = [
    "Observations",
    "Mean",
    "Median",
    "Std. Dev.",
    "Min",
    "Max",
    "Skewness",
    "Kurtosis",
    "Jarque Bera",
    "Probability",
];

impl DescriptiveStats {
    /// Cells in [`ROW_LABELS`] order.
    pub fn cells(&self, precision: Precision) -> [String; 10] {
        let f = |x: f64| precision.fmt(x);
        [
            self.n.to_string(),
            f(self.mean),
            f(self.median),
            f(self.std_dev),
            f(self.min),
            f(self.max),
            f(self.skewness),
            f(self.kurtosis),
            f(self.jarque_bera),
            f(self.p_value),
        ]
    }
}

pub fn describe(series: &[f64]) -> Result<DescriptiveStats> {
    describe_with(series, StdDenominator::Sample)
}

pub fn describe_with(series: &[f64], denom: StdDenominator) -> Result<DescriptiveStats> {
    let n = series.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("series contains non-finite values"));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let ss = m2;
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= (f64::EPSILON * mean.abs()).powi(2) {
        return Err(Error::validation(
            "zero variance: skewness and kurtosis are undefined",
        ));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    let std_dev = match denom {
        StdDenominator::Sample => (ss / (nf - 1.0)).sqrt(),
        StdDenominator::Population => m2.sqrt(),
    };

    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let (jarque_bera, p_value) = jarque_bera(n, skewness, kurtosis);

    Ok(DescriptiveStats {
        n,
        mean,
        median,
        std_dev,
        min: sorted[0],
        max: sorted[n - 1],
        skewness,
        kurtosis,
        jarque_bera,
        p_value,
    })
}

/// `JB = n/6 * (S^2 + (K - 3)^2 / 4)` with its chi-squared(2) upper tail
/// probability `exp(-JB / 2)`.
pub fn jarque_bera(n: usize, skewness: f64, kurtosis: f64) -> (f64, f64) {
    let excess = kurtosis - 3.0;
    let stat = n as f64 / 6.0 * (skewness * skewness + excess * excess / 4.0);
    (stat, (-stat / 2.0).exp())
}

/// Writes a statistics table: one row per label, one column per series.
pub fn write_table<W: Write>(
    out: W,
    names: &[String],
    stats: &[DescriptiveStats],
    precision: Precision,
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let csv_err = |e: csv::Error| Error::validation(format!("table write failed: {e}"));
    let mut header = vec!["statistic".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let cells: Vec<[String; 10]> = stats.iter().map(|s| s.cells(precision)).collect();
    for (r, label) in ROW_LABELS.iter().enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(cells.iter().map(|c| c[r].clone()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<table output>", e))?;
    Ok(())
}
