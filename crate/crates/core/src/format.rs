use std::str::FromStr;

use serde::{Serialize, Serializer};

/// Numeric output precision for tables and JSON documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Fixed number of decimals.
    Decimals(usize),
    /// Shortest representation that round-trips.
    #[default]
    Full,
}

impl Precision {
    pub const TABLE: Precision = Precision::Decimals(4);

    pub fn fmt(self, x: f64) -> String {
        match self {
            Precision::Decimals(d) => format!("{x:.d$}"),
            Precision::Full => format!("{x}"),
        }
    }

    /// Rounds a value for JSON output.
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Decimals(d) if x.is_finite() => {
                let p = 10f64.powi(d as i32);
                let r = (x * p).round() / p;
                if r == 0.0 {
                    0.0
                } else {
                    r
                }
            }
            _ => x,
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(Precision::Full);
        }
        s.parse::<usize>()
            .map(Precision::Decimals)
            .map_err(|_| format!("precision must be `full` or a number of decimals, got `{s}`"))
    }
}

impl Serialize for Precision {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Precision::Decimals(d) => serializer.serialize_u64(*d as u64),
            Precision::Full => serializer.serialize_str("full"),
        }
    }
}
