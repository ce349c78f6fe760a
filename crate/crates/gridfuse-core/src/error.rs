use thiserror::Error;

/// Errors surfaced by the numeric core and the modeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("matrix is numerically singular (pivot {pivot:.3e} at index {index})")]
    Singular { pivot: f64, index: usize },

    #[error("eigenvalue iteration failed to converge after {sweeps} sweeps")]
    EigNoConvergence { sweeps: usize },

    #[error(
        "power flow did not converge within {iterations} iterations (residual {residual:.3e})"
    )]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("infeasible operating point: {0}")]
    InfeasibleOperatingPoint(String),

    #[error("invalid machine: {0}")]
    InvalidMachine(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("trajectory diverged at step {step} (norm {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("index out of range: {0}")]
    IndexError(String),

    #[error("insufficient history for window of {needed} at step {at}")]
    WindowError { needed: usize, at: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("frame mismatch: expected {expected} frame")]
    FrameMismatch { expected: &'static str },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
