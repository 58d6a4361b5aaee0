use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain (e.g. `s` not in (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector or matrix of the wrong size.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The normal system of a least-squares fit is numerically singular.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    /// Picard iteration failed to reach tolerance.
    #[error("picard iteration did not converge after {iterations} iterations (last gap {last_gap:e})")]
    Divergence {
        iterations: usize,
        last_gap: f64,
        gaps: Vec<f64>,
    },

    /// Amplitude scan left too few usable amplitudes.
    #[error("amplitude scan failed: {0}")]
    Scan(String),

    /// Probe system for coefficient recovery is rank deficient.
    #[error("rank-deficient probe system: {0}")]
    RankDeficient(String),

    /// A module error raised inside a named experiment stage.
    #[error("{stage}: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The innermost error, past any stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
