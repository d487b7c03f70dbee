use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McmcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("NaN acceptance ratio")]
    NanRatio,

    #[error("all proposal weights are zero")]
    DegenerateWeights,

    #[error("density at the current point is zero")]
    UndefinedDensity,

    #[error("trajectory diverged at sub-step {substep}")]
    Divergence { substep: usize },

    #[error("Jacobian is singular to machine precision (det = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<McmcError>,
    },
}

impl McmcError {
    pub fn config(msg: impl Into<String>) -> Self {
        McmcError::Config(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ McmcError::AtStep { .. } => e,
            e => McmcError::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Strips any step annotation.
    pub fn root(&self) -> &McmcError {
        match self {
            McmcError::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), McmcError::Divergence { .. })
    }
}
