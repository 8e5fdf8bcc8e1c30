use thiserror::Error;

/// Errors raised by the numeric and protocol layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} is outside {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The normalization K of the kept branches vanished.
    #[error("degenerate channel: K = {0:e}")]
    DegenerateChannel(f64),

    #[error("no threshold: {0}")]
    NoThreshold(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(
    what: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    domain: &'static str,
) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value,
            domain,
        })
    }
}
