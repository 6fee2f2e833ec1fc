use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite initial state {0:?}")]
    NonFiniteState([f64; 3]),

    #[error("integration diverged at output step {step}")]
    Diverged { step: usize },

    #[error("non-finite value in reservoir run at column {column}")]
    NonFiniteRun { column: usize },

    #[error("Lyapunov estimate did not settle: last window spread {spread:.3e} exceeds {tolerance:.3e}")]
    LyapunovNotConverged { spread: f64, tolerance: f64 },

    #[error("ridge system is not positive definite (gamma = {gamma}, diagonal ratio {diag_ratio:.3e})")]
    Singular { gamma: f64, diag_ratio: f64 },

    #[error("training diverged at step {step} (loss = {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("truth series has zero range; NRMSE is undefined")]
    ZeroRange,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
