//! Online learning of time-varying graph topologies from streaming graph signals.
//!
//! The crate tracks an empirical covariance matrix as samples arrive and, at every
//! time step, refines a graph shift operator estimate with a prediction step (a
//! Taylor model of the next cost) followed by a correction step (proximal gradient
//! on the newly revealed cost). Three graph models are provided:
//!
//! - Gaussian graphical model ([`models::GgmOracle`]), precision matrix in h-space;
//! - structural equation model ([`models::SemOracle`]), hollow adjacency in hh-space;
//! - smoothness-based model ([`models::SbmOracle`]), nonnegative weights in hh-space.
//!
//! Reduced coordinates follow the column-major lower-triangular scan implemented in
//! [`vectorization`].

pub mod covariance;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod vectorization;

pub use error::{Error, Result};
