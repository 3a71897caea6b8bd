//! Frequency-domain unraveling of the Lindblad master equation.
//!
//! Open-system dynamics are sampled as conditional wavefunctions labeled
//! by the frequencies of their decays rather than by decay times. The
//! [`engine`] evolves the coupled hierarchies, [`monte_carlo`] samples
//! decay records and forms importance-weighted estimates, and [`oracle`]
//! provides the brute-force references (master equation, steady state,
//! full record sums, quantum-regression spectra) the estimates are
//! checked against.

pub mod engine;
pub mod error;
pub mod grid;
pub mod model;
pub mod monte_carlo;
pub mod numerics;
pub mod oracle;

pub use error::{Error, Result};
