use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid Fock dimensions {dims:?}: {reason}")]
    InvalidDimension { dims: Vec<usize>, reason: String },

    #[error("unknown mode label `{0}`")]
    UnknownMode(String),

    #[error("operator spaces differ: {left:?} vs {right:?}")]
    SpaceMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("drive Omega/kappa = {ratio} exceeds the weak-drive limit {limit}; pass the strong-drive override to proceed")]
    StrongDrive { ratio: f64, limit: f64 },

    #[error("density matrix violates `{check}`: deviation {value:e}")]
    InvalidState { check: &'static str, value: f64 },

    #[error("steady state is not unique (null space dimension > 1)")]
    DegenerateSteadyState,

    #[error("steady-state solver failed, residual {residual:e}")]
    SolverFailure { residual: f64 },

    #[error("correlation undefined: mean occupation {mean:e} below threshold")]
    UndefinedCorrelation { mean: f64 },

    #[error("detection probability {probability:e} is zero; no conditional state")]
    NoDetection { probability: f64 },

    #[error("propagation failed at tau = {tau}: {reason}")]
    Integration { tau: f64, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("thermal cutoff n_max = {n_max} keeps only {weight} of the phonon distribution")]
    ThermalCutoff { n_max: usize, weight: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
