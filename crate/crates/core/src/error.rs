//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the crate. `exit_class` sorts them into the
/// coarse categories the CLI maps onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh construction: {0}")]
    MeshConstruction(String),

    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("element {element} has nonpositive Jacobian determinant ({det:.3e})")]
    InvertedElement { element: usize, det: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("boundary condition conflict: {0}")]
    BcConflict(String),

    #[error("parametric boundary value '{0}' not resolved before use")]
    UnresolvedParametric(String),

    #[error("degenerate stiffness: Young's modulus nonpositive at T={t}")]
    DegenerateStiffness { t: f64 },

    #[error("material singularity: {0}")]
    MaterialSingularity(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("linear solver: {0}")]
    LinearSolve(String),

    #[error("BiCGSTAB stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    BicgstabStagnation {
        iterations: usize,
        residual: f64,
        /// Best iterate found so far.
        best: Vec<f64>,
    },

    #[error("Newton iteration did not converge in {max_iter} iterations (last residual {residual:.3e})")]
    NonConvergence { max_iter: usize, residual: f64 },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("Nyquist violation: grid of {grid} nodes cannot carry {modes} retained modes per side")]
    Nyquist { grid: usize, modes: usize },

    #[error("model shape mismatch: {0}")]
    WidthMismatch(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (L_t={thermal:.3e}, L_u={mechanical:.3e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        thermal: f64,
        mechanical: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    /// Usage / configuration / input-format problems.
    Usage,
    /// Numerical failures (non-convergence, non-finite loss, singular systems).
    Numerical,
}

impl Error {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::NonConvergence { .. }
            | Error::NonFiniteLoss { .. }
            | Error::BicgstabStagnation { .. }
            | Error::LinearSolve(_)
            | Error::DegenerateStiffness { .. } => ExitClass::Numerical,
            _ => ExitClass::Usage,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
