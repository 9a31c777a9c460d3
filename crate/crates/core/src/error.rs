use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix product representation needs rho_b < rho_a (got rho_a={rho_a}, rho_b={rho_b})")]
    NotNormalizable { rho_a: f64, rho_b: f64 },

    #[error("rates do not satisfy Liggett's condition; use the general representation")]
    NotLiggett,

    #[error("no density in [0,1] solves the boundary current relation for {side} boundary")]
    NoDensityRoot { side: &'static str },

    #[error("two densities in [0,1] solve the boundary current relation for {side} boundary")]
    AmbiguousDensity { side: &'static str },

    #[error("absorbing state reached: total event rate is zero")]
    Absorbing,

    #[error("truncation did not converge after {doublings} doublings (last n_max={n_max})")]
    TruncationNotConverged { doublings: usize, n_max: usize },

    #[error("size guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("chain has {closed_classes} closed communicating classes; stationary law not unique")]
    Reducible { closed_classes: usize },

    #[error("linear system is singular beyond the expected null space")]
    Singular,

    #[error("consistency check failed: {0}")]
    Inconsistent(String),

    #[error("empty input")]
    EmptyInput,

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error comes from bad user input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::NotNormalizable { .. }
                | Error::NotLiggett
                | Error::NoDensityRoot { .. }
                | Error::AmbiguousDensity { .. }
                | Error::GuardExceeded(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
