//! Generalized dynamic conditional correlation (DCC-GARCH) toolkit.
//!
//! The pipeline runs price ingestion ([`ingest`]), per-asset GARCH(1,1)
//! volatility filtering ([`garch`]), correlation-stage estimation with a
//! diagonal news matrix ([`dcc`]) and summary tables ([`descriptive`]).
//! [`simulate`] generates panels from a known process for verification.

pub mod cli;
pub mod dcc;
pub mod descriptive;
pub mod error;
pub mod format;
pub mod garch;
pub mod ingest;
pub mod linalg;
pub mod optimize;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
