use thiserror::Error;

/// Errors raised by the simulator and its oracles.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Integration produced a non-finite value.
    #[error("numerical failure at t = {time}: {detail}")]
    Numerical { time: f64, detail: String },

    /// The Liouvillian has more than one stationary state.
    #[error("steady state is not unique: null space dimension {dimension}")]
    DegenerateSteadyState { dimension: usize },

    /// A Monte Carlo trial failed; the seed and index reproduce it.
    #[error("trial {index} (seed {seed}) failed: {source}")]
    Trial {
        seed: u64,
        index: u64,
        #[source]
        source: Box<Error>,
    },

    /// An invariant check exceeded its bound.
    #[error("validation failure: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors that originate from non-finite arithmetic.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
