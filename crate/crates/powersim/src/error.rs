use std::path::PathBuf;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("grid file line {line}: {msg}")]
    GridFormat { line: usize, msg: String },

    #[error("invalid grid model: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The load condition has no power-flow solution; the scenario is redrawn.
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    /// Rotor angles separated; the scenario is redrawn.
    #[error("unstable trajectory at t = {time:.3} s")]
    Unstable { time: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{rejected} scenarios rejected while generating {requested}; giving up")]
    TooManyRejections { requested: usize, rejected: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] oscloc_core::Error),
}

impl SimError {
    /// Scenario-level failures that lead to a redraw rather than an abort.
    pub fn is_rejection(&self) -> bool {
        matches!(self, SimError::PowerFlowDiverged { .. } | SimError::Unstable { .. })
    }
}
