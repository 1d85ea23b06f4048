use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum SwellError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} outside admissible range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mesh tangled: element {element} has Jacobian determinant {det:.3e}")]
    MeshTangled { element: usize, det: f64 },

    #[error("Newton inversion of element {element} map did not converge (residual {residual:.3e})")]
    InversionFailed { element: usize, residual: f64 },

    #[error("point ({x}, {y}) lies outside every element")]
    PointOutsideMesh { x: f64, y: f64 },

    #[error("inconsistent Dirichlet data for dof {dof}: {first} vs {second}")]
    InconsistentDirichlet { dof: usize, first: f64, second: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("free surface is not a graph over x: {0}")]
    SurfaceFold(String),

    #[error("solver diverged at step {step}: max |value| = {value:.3e}")]
    Diverged { step: usize, value: f64 },

    #[error("no steady state after {steps} steps (last change {change:.3e})")]
    NotConverged { steps: usize, change: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SwellError>;
