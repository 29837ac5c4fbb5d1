use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid particle grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("harmonic {harmonic} is at or beyond Nyquist for {samples} samples per period")]
    OutOfBand { harmonic: u32, samples: usize },

    #[error("time step {dt:e} s exceeds the stability bound {bound:e} s")]
    StepSize { dt: f64, bound: f64 },

    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),

    #[error("simulation of atom {atom} failed: {source}")]
    Atom {
        atom: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("NNLS did not converge within {iterations} iterations")]
    NnlsNotConverged { iterations: usize, best: Vec<f64> },

    #[error("empty measurement set")]
    EmptyMeasurements,

    #[error("zero reference gain at drive field {k}, harmonic {harmonic}")]
    ZeroReference { k: usize, harmonic: u32 },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("missing baseline: {0}")]
    MissingBaseline(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
