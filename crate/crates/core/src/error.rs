use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced at tape node {node}")]
    NonFiniteValue { node: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("record {index} has no class label")]
    MissingLabel { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient for parameter {index} at iteration {iteration}")]
    NonFiniteGradient { iteration: usize, index: usize },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("time step {dt} exceeds the explicit stability bound {bound}")]
    UnstableTimestep { dt: f64, bound: f64 },

    #[error("density grid too narrow: boundary/max density ratio {ratio:e}")]
    GridTooNarrow { ratio: f64 },

    #[error("density curves are defined on different grids")]
    GridMismatch,

    #[error("flow sampler diverged at step {step}")]
    SamplerDiverged { step: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to I/O or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteValue { .. }
                | Error::NonFiniteGradient { .. }
                | Error::SimulationDiverged { .. }
                | Error::SamplerDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
