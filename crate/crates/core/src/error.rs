use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bond {bond} is not valid for a {topology} chain of {n_sites} sites")]
    InvalidBond {
        bond: usize,
        n_sites: usize,
        topology: &'static str,
    },

    #[error("observable does not provide second derivatives")]
    MissingSecondDerivatives,

    #[error("quadrature budget exceeded: {dims} coupled dimensions at order {order} (limit {max_dims} dims, {max_nodes} nodes); use a Monte Carlo estimate instead")]
    QuadratureBudget {
        dims: usize,
        order: usize,
        max_dims: usize,
        max_nodes: usize,
    },

    #[error("stability violated at bond {bond}: drift step {step:.3e} exceeds ratio {ratio} (state norm {norm:.6e})")]
    Stability {
        bond: usize,
        step: f64,
        ratio: f64,
        norm: f64,
    },

    #[error("non-finite result in {0}")]
    NonFinite(&'static str),

    #[error("need at least {needed} replicas, got {got}")]
    TooFewReplicas { needed: usize, got: usize },

    #[error("autocorrelation not resolved: window {window} vs series length {len}; run longer")]
    Unresolved { window: usize, len: usize },

    #[error("negative quadratic form value {0:.3e}; quadrature is inaccurate")]
    NegativeForm(f64),

    #[error("field is only defined on the periodic chain")]
    NotPeriodic,

    #[error("unsupported target: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
