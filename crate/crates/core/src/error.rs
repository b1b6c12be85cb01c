use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum UldError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {what} at coordinate {coordinate}: {value}")]
    NonFinite {
        what: &'static str,
        coordinate: usize,
        value: f64,
    },

    #[error("degenerate transition: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "chains at level {level} did not meet within {cap} kernel steps (state gap {gap:.3e})"
    )]
    NonMeeting { level: u32, cap: usize, gap: f64 },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<UldError>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UldError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(UldError::Dimension { what, expected, got })
    }
}
