//! Error types shared by the engine modules.

use thiserror::Error;

use crate::bprocess::FcsReport;

#[derive(Error, Debug)]
pub enum EngineError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid horizon set: {0}")]
    InvalidSet(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("evaluation outside the horizon set (scenario {scenario}, node {node})")]
    OutsideSet { scenario: usize, node: usize },

    #[error("coupled sequence rejected: {0}")]
    InvalidFcs(FcsReport),

    #[error("stopping time is not inner for the horizon set: {0}")]
    NotInnerStoppingTime(String),

    #[error("integrator is not flagged inner; the integral is not uniquely defined")]
    NonInnerIntegrator,

    #[error("process carries no decomposition")]
    MissingDecomposition,

    #[error("no diffusion coefficients attached for the analytic bracket")]
    MissingDiffusion,

    #[error("divergent integral at scenario {scenario}, node {node}")]
    DivergentIntegral { scenario: usize, node: usize },

    #[error("horizon sets of the operands differ")]
    SetMismatch,

    #[error("derivative check failed at registration: {0}")]
    DerivativeMismatch(String),

    #[error("config error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("exit law error: {0}")]
    ExitLaw(String),

    #[error("market error: {0}")]
    Market(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
