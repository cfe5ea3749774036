use thiserror::Error;

/// Errors raised by model construction, constrained dynamics and the
/// density-of-states machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: model has {expected} coordinates, state has q={q}, p={p}")]
    Dimension { expected: usize, q: usize, p: usize },

    #[error("non-finite state component at index {index}")]
    NonFinite { index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("energy {energy} is outside the domain of the {family} family: {reason}")]
    Domain {
        family: &'static str,
        energy: f64,
        reason: String,
    },

    #[error("degenerate constraint gradient at t={t}: |P|^2 = {norm_sq:e} <= {threshold:e}")]
    Singular { t: f64, norm_sq: f64, threshold: f64 },

    #[error("surface projection did not converge after {iterations} iterations (|f| = {residual:e})")]
    ProjectionFailed { iterations: usize, residual: f64 },

    #[error("state is off the constraint surface: |f| = {residual:e} > {tolerance:e}")]
    OffSurface { residual: f64, tolerance: f64 },

    #[error("divergent integral: {0}; supply an energy window")]
    Divergent(String),

    #[error("entropy is not defined here: {0}")]
    EntropyBranch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by the numerics (singular constraints, failed
    /// projections, divergent integrals) rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::ProjectionFailed { .. }
            | Error::OffSurface { .. }
            | Error::Divergent(_)
            | Error::Domain { .. }
            | Error::EntropyBranch(_) => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
